//! PPM rendering of residual grids (heatmaps) and spectra (line plots).

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Binary PPM (P6) image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Pixmap {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }
}

const NAN_GRAY: [u8; 3] = [128, 128, 128];

/// Blue (−1) through white (0) to red (+1).
pub fn diverging(x: f64) -> [u8; 3] {
    if x.is_nan() {
        return NAN_GRAY;
    }
    let x = x.clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    if x >= 0.0 {
        [255, fade(x), fade(x)]
    } else {
        [fade(-x), fade(-x), 255]
    }
}

/// Black (0) to white (1).
fn sequential(x: f64) -> [u8; 3] {
    if x.is_nan() {
        return NAN_GRAY;
    }
    let v = (255.0 * x.clamp(0.0, 1.0)).round() as u8;
    [v, v, v]
}

/// Heatmap of a row-major matrix. The first row is drawn at the bottom so
/// drive frequency increases upward. `signed` selects the diverging map with a
/// scale symmetric about zero at the largest |value|.
pub fn heatmap(rows: &[Vec<f64>], signed: bool) -> Pixmap {
    let nr = rows.len().max(1);
    let nc = rows.first().map_or(1, |r| r.len().max(1));
    let sx = (512 / nc).max(1);
    let sy = (512 / nr).max(1);
    let finite = rows.iter().flatten().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let scale = lo.abs().max(hi.abs());
    let mut img = Pixmap::new(nc * sx, nr * sy, NAN_GRAY);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let color = if signed {
                diverging(if scale > 0.0 { v / scale } else { 0.0 * v })
            } else if hi > lo {
                sequential((v - lo) / (hi - lo))
            } else {
                sequential(0.5 + 0.0 * v)
            };
            let y0 = (nr - 1 - r) * sy;
            for y in y0..y0 + sy {
                for x in c * sx..(c + 1) * sx {
                    img.pixels[y * img.width + x] = color;
                }
            }
        }
    }
    img
}

const PANEL_WIDTH: usize = 640;
const PANEL_HEIGHT: usize = 200;
const MARGIN: usize = 12;

/// One stacked line-plot panel per series, each scaled to its own range.
pub fn line_plots(x: &[f64], series: &[Vec<f64>]) -> Pixmap {
    let mut img = Pixmap::new(
        PANEL_WIDTH,
        PANEL_HEIGHT * series.len().max(1),
        [255, 255, 255],
    );
    let (xlo, xhi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let plot_w = (PANEL_WIDTH - 2 * MARGIN) as f64;
    let plot_h = (PANEL_HEIGHT - 2 * MARGIN) as f64;
    for (p, ys) in series.iter().enumerate() {
        let top = (p * PANEL_HEIGHT + MARGIN) as i64;
        let left = MARGIN as i64;
        let right = (PANEL_WIDTH - MARGIN) as i64;
        let bottom = top + plot_h as i64;
        let axis = [0, 0, 0];
        img.line((left, bottom), (right, bottom), axis);
        img.line((left, top), (left, bottom), axis);

        let (ylo, yhi) = ys
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if !(ylo.is_finite() && yhi.is_finite()) {
            continue;
        }
        if ylo < 0.0 && yhi > 0.0 {
            let zero = bottom - ((0.0 - ylo) / (yhi - ylo) * plot_h).round() as i64;
            img.line((left, zero), (right, zero), [200, 200, 200]);
        }
        let to_px = |xv: f64, yv: f64| {
            let fx = if xhi > xlo {
                (xv - xlo) / (xhi - xlo)
            } else {
                0.5
            };
            let fy = if yhi > ylo {
                (yv - ylo) / (yhi - ylo)
            } else {
                0.5
            };
            (
                left + (fx * plot_w).round() as i64,
                bottom - (fy * plot_h).round() as i64,
            )
        };
        let mut prev = None;
        for (&xv, &yv) in x.iter().zip(ys) {
            if !yv.is_finite() {
                prev = None;
                continue;
            }
            let pt = to_px(xv, yv);
            if let Some(q) = prev {
                img.line(q, pt, [20, 60, 160]);
            } else {
                img.set(pt.0, pt.1, [20, 60, 160]);
            }
            prev = Some(pt);
        }
    }
    img
}

/// Parsed product file.
#[derive(Clone, Debug, PartialEq)]
pub enum Plot {
    Residuals(Vec<Vec<f64>>),
    Counts(Vec<Vec<f64>>),
    Spectrum { x: Vec<f64>, series: Vec<Vec<f64>> },
}

fn parse_cell(s: &str) -> Result<f64> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse().with_context(|| format!("not a number: `{s}`"))
}

pub fn parse_csv(text: &str) -> Result<Plot> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let corner = header.get(0).unwrap_or_default();
    let mut first = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut cells = record.iter();
        first.push(parse_cell(cells.next().unwrap_or_default())?);
        rows.push(cells.map(parse_cell).collect::<Result<Vec<f64>>>()?);
    }
    match corner {
        "drive_freq_hz/residual" => Ok(Plot::Residuals(rows)),
        "drive_freq_hz/counts" => Ok(Plot::Counts(rows)),
        "drive_freq_hz" => {
            let cols = header.len() - 1;
            let series = (0..cols)
                .map(|c| {
                    rows.iter()
                        .map(|r| r.get(c).copied().unwrap_or(f64::NAN))
                        .collect()
                })
                .collect();
            Ok(Plot::Spectrum { x: first, series })
        }
        other => bail!("unknown product type (header starts with `{other}`)"),
    }
}

fn json_matrix(v: &serde_json::Value) -> Option<Vec<Vec<f64>>> {
    v.as_array()?
        .iter()
        .map(|row| {
            row.as_array()
                .map(|r| r.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect())
        })
        .collect()
}

fn json_vector(v: &serde_json::Value) -> Option<Vec<f64>> {
    v.as_array()
        .map(|r| r.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect())
}

pub fn parse_json(text: &str) -> Result<Plot> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let product = v["product"].as_str().unwrap_or_default();
    let x = || json_vector(&v["drive_freq_hz"]).context("missing drive_freq_hz");
    match product {
        "residual_grid" => Ok(Plot::Residuals(
            json_matrix(&v["residuals"])
                .context("residual grid without residuals (render the CSV instead)")?,
        )),
        "rms_spectrum" | "energy_spectrum" | "phase_trace" => {
            let column = match product {
                "rms_spectrum" => "rms_velocity_m_s",
                "energy_spectrum" => "absorbed_energy_j",
                _ => "phase_t0_rad",
            };
            let y = json_vector(&v[column])
                .context("spectrum metadata without values (render the CSV instead)")?;
            Ok(Plot::Spectrum {
                x: x()?,
                series: vec![y],
            })
        }
        "offset_scan" => Ok(Plot::Spectrum {
            x: x()?,
            series: json_matrix(&v["rms_velocity_m_s"]).context("offset scan without values")?,
        }),
        other => bail!("unknown product type `{other}`"),
    }
}

pub fn render_plot(plot: &Plot) -> Pixmap {
    match plot {
        Plot::Residuals(rows) => heatmap(rows, true),
        Plot::Counts(rows) => heatmap(rows, false),
        Plot::Spectrum { x, series } => line_plots(x, series),
    }
}

/// Reads a product file (CSV or JSON) and returns PPM bytes.
pub fn render_file(path: &Path) -> Result<Vec<u8>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let plot = if path.extension().is_some_and(|e| e == "json") {
        parse_json(&text)
    } else {
        parse_csv(&text)
    }
    .with_context(|| format!("{}", path.display()))?;
    Ok(render_plot(&plot).to_ppm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grid_is_uniform_white() {
        let img = heatmap(&[vec![0.0; 4], vec![0.0; 4]], true);
        assert!(img.pixels.iter().all(|p| *p == [255, 255, 255]));
    }

    #[test]
    fn scale_is_symmetric() {
        let img = heatmap(&[vec![-1.0, 0.5, 2.0]], true);
        let sx = img.width / 3;
        assert_eq!(img.pixels[0], diverging(-0.5));
        assert_eq!(img.pixels[sx], diverging(0.25));
        assert_eq!(img.pixels[2 * sx], [255, 0, 0]);
    }

    #[test]
    fn first_row_is_at_the_bottom() {
        let img = heatmap(&[vec![1.0], vec![-1.0]], true);
        assert_eq!(img.pixels[0], [0, 0, 255]);
        assert_eq!(*img.pixels.last().unwrap(), [255, 0, 0]);
    }

    #[test]
    fn ppm_header() {
        let bytes = Pixmap::new(3, 2, [1, 2, 3]).to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
    }

    #[test]
    fn csv_kinds() {
        let grid = "drive_freq_hz/residual,1e-6,2e-6\n8.67e5,1,nan\n";
        assert!(matches!(parse_csv(grid).unwrap(), Plot::Residuals(r) if r[0][1].is_nan()));
        let spec = "drive_freq_hz,rms_velocity_m_s\n1,2\n3,4\n";
        assert_eq!(
            parse_csv(spec).unwrap(),
            Plot::Spectrum {
                x: vec![1.0, 3.0],
                series: vec![vec![2.0, 4.0]]
            }
        );
        assert!(parse_csv("time,value\n1,2\n").is_err());
    }
}
