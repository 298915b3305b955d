//! Drive-frequency sweeps of the gated first-photon measurement, producing
//! background-subtracted residual maps.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{fit_exponential_background, ExponentialFit};
use crate::consts::angular_to_hz;
use crate::detection::{last_start_pulse, sample_first_photon, tac_gate, DetectionConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::oscillator::{DriveConfig, ModeParams, ModeSum};

pub const ROW_SEED_RULE: &str =
    "row_seed = splitmix64(seed + (row + 1) * 0x9E3779B97F4A7C15), wrapping u64 arithmetic; each row draws from ChaCha8 seeded with row_seed";

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn row_seed(seed: u64, row: usize) -> u64 {
    splitmix64(seed.wrapping_add((row as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Arrival-time histograms and residuals over a drive-frequency sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualGrid {
    /// rad/s
    pub drive_frequencies: Vec<f64>,
    /// Bin centers of the TAC arrival time, s.
    pub time_bins: Vec<f64>,
    /// Counts minus fitted background; NaN on flagged rows.
    pub residuals: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
    pub fit_params: Vec<Option<ExponentialFit>>,
    /// Reason a row's background fit failed.
    pub flags: Vec<Option<String>>,
    /// Arrival time minus detection-frame time for each row,
    /// `t_d + t_offset − t_start`, s.
    pub gate_delays: Vec<f64>,
    pub modes: Vec<ModeParams>,
    pub drive: DriveConfig,
    pub detection: DetectionConfig,
    pub t_offset: f64,
    pub reps: u64,
    pub seed: u64,
}

impl ResidualGrid {
    pub fn rows(&self) -> usize {
        self.drive_frequencies.len()
    }

    pub fn cols(&self) -> usize {
        self.time_bins.len()
    }

    pub fn flagged_rows(&self) -> usize {
        self.flags.iter().filter(|f| f.is_some()).count()
    }

    /// CSV with a header of bin centers (s) and one row per drive frequency (Hz).
    pub fn residuals_csv(&self) -> String {
        matrix_csv(
            "drive_freq_hz/residual",
            &self.drive_frequencies,
            &self.time_bins,
            self.residuals
                .iter()
                .map(|r| r.iter().map(|v| format_value(*v)).collect()),
        )
    }

    pub fn counts_csv(&self) -> String {
        matrix_csv(
            "drive_freq_hz/counts",
            &self.drive_frequencies,
            &self.time_bins,
            self.counts
                .iter()
                .map(|r| r.iter().map(|v| v.to_string()).collect()),
        )
    }

    /// Everything needed to reproduce the grid, without the matrices.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "product": "residual_grid",
            "rows": self.rows(),
            "cols": self.cols(),
            "drive_frequencies_hz": self.drive_frequencies.iter().map(|w| angular_to_hz(*w)).collect::<Vec<_>>(),
            "modes": self.modes,
            "drive": self.drive,
            "detection": self.detection,
            "t_offset": self.t_offset,
            "reps": self.reps,
            "seed": self.seed,
            "row_seed_rule": ROW_SEED_RULE,
            "row_seeds": (0..self.rows()).map(|r| row_seed(self.seed, r)).collect::<Vec<_>>(),
            "gate_delays": self.gate_delays,
            "fit_params": self.fit_params,
            "flags": self.flags,
            "histogram": "left-closed bins of width bin_width starting at dead_time; arrivals below dead_time or past the last complete bin are discarded",
        })
    }
}

pub(crate) fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:e}")
    }
}

fn matrix_csv(
    corner: &str,
    freqs: &[f64],
    bins: &[f64],
    rows: impl Iterator<Item = Vec<String>>,
) -> String {
    let mut out = String::from(corner);
    for t in bins {
        let _ = write!(out, ",{t:e}");
    }
    out.push('\n');
    for (w, row) in freqs.iter().zip(rows) {
        let _ = write!(out, "{:e}", angular_to_hz(*w));
        for cell in row {
            out.push(',');
            out.push_str(&cell);
        }
        out.push('\n');
    }
    out
}

struct Row {
    counts: Vec<u64>,
    residuals: Vec<f64>,
    fit: Option<ExponentialFit>,
    flag: Option<String>,
    gate_delay: f64,
}

/// Histogram of gated first-photon arrival times for one drive frequency.
pub fn simulate_row(
    sum: &ModeSum,
    drive: &DriveConfig,
    det: &DetectionConfig,
    reps: u64,
    t_offset: f64,
    seed: u64,
) -> Result<(Vec<u64>, f64)> {
    let beat = 2.0 * PI / drive.omega_d;
    let drive_end = drive.t_d;
    let detect_start = drive.t_d + t_offset;
    let gate_delay = detect_start - last_start_pulse(beat, drive_end);
    let jitter = (det.phase_jitter > 0.0)
        .then(|| Normal::new(0.0, det.phase_jitter).expect("jitter validated finite"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; det.bin_count()];
    for _ in 0..reps {
        let shift = jitter
            .as_ref()
            .map_or(0.0, |n| n.sample(&mut rng) / drive.omega_d);
        let Some(t) = sample_first_photon(|t| sum.velocity_at(t), det, &mut rng) else {
            continue;
        };
        let arrival = tac_gate(beat, drive_end - shift, detect_start + t - shift)?;
        if let Some(j) = det.bin_of(arrival) {
            counts[j] += 1;
        }
    }
    Ok((counts, gate_delay))
}

/// Runs `reps` gated first-photon experiments at every drive frequency.
///
/// Rows are independent, seeded by [`row_seed`], and may run in parallel on
/// the current rayon pool; the result does not depend on the thread count.
/// A row whose background fit fails is flagged rather than aborting the sweep.
pub fn run_sweep(
    modes: &[ModeParams],
    drive: &DriveConfig,
    det: &DetectionConfig,
    freq_grid: &[f64],
    reps: u64,
    t_offset: f64,
    seed: u64,
) -> Result<ResidualGrid> {
    if reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    if freq_grid.is_empty() {
        return Err(Error::invalid("freq_grid", "must not be empty"));
    }
    for &w in freq_grid {
        ensure_finite("freq_grid", w)?;
        if w <= 0.0 {
            return Err(Error::invalid("freq_grid", "frequencies must be positive"));
        }
    }
    det.validate()?;
    drive.validate()?;
    let time_bins = det.bin_centers();

    let rows: Vec<Row> = freq_grid
        .par_iter()
        .enumerate()
        .map(|(r, &w)| {
            let d = drive.at_frequency(w);
            let sum = ModeSum::new(modes, &d, t_offset)?;
            let (counts, gate_delay) =
                simulate_row(&sum, &d, det, reps, t_offset, row_seed(seed, r))?;
            let as_f64: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            Ok(match fit_exponential_background(&time_bins, &as_f64) {
                Ok(fit) => Row {
                    counts,
                    residuals: fit.residuals,
                    fit: Some(fit.params),
                    flag: None,
                    gate_delay,
                },
                Err(e) => {
                    log::warn!("row {r} ({:.1} Hz): {e}", angular_to_hz(w));
                    Row {
                        residuals: vec![f64::NAN; counts.len()],
                        counts,
                        fit: None,
                        flag: Some(e.to_string()),
                        gate_delay,
                    }
                }
            })
        })
        .collect::<Result<_>>()?;

    let mut grid = ResidualGrid {
        drive_frequencies: freq_grid.to_vec(),
        time_bins,
        residuals: Vec::with_capacity(rows.len()),
        counts: Vec::with_capacity(rows.len()),
        fit_params: Vec::with_capacity(rows.len()),
        flags: Vec::with_capacity(rows.len()),
        gate_delays: Vec::with_capacity(rows.len()),
        modes: modes.to_vec(),
        drive: *drive,
        detection: *det,
        t_offset,
        reps,
        seed,
    };
    for row in rows {
        grid.residuals.push(row.residuals);
        grid.counts.push(row.counts);
        grid.fit_params.push(row.fit);
        grid.flags.push(row.flag);
        grid.gate_delays.push(row.gate_delay);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::{hz_to_angular, BE9_ION_MASS};
    use crate::detection::Lineshape;

    fn det() -> DetectionConfig {
        DetectionConfig {
            base_rate: 2e5,
            detuning: -hz_to_angular(12e6),
            linewidth: hz_to_angular(19.4e6),
            k_detect: 2.0 * PI / 313e-9,
            damping: 0.0,
            dead_time: 4.5e-6,
            window: 30e-6,
            bin_width: 0.1e-6,
            lineshape: Lineshape::Lorentzian,
            phase_jitter: 0.0,
        }
    }

    fn setup(force: f64) -> (Vec<ModeParams>, DriveConfig, Vec<f64>) {
        let w0 = hz_to_angular(867e3);
        let modes = vec![ModeParams::new(w0, BE9_ION_MASS, 1.0).unwrap()];
        let drive = DriveConfig::new(force, w0, 0.0, 100e-6).unwrap();
        let grid = (0..4).map(|i| w0 + hz_to_angular(2e3 * i as f64)).collect();
        (modes, drive, grid)
    }

    #[test]
    fn row_seeds_are_distinct() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|r| row_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(row_seed(1, 0), row_seed(2, 0));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (modes, drive, grid) = setup(1e-22);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_sweep(&modes, &drive, &det(), &grid, 2000, 0.0, 9).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.residuals_csv(), b.residuals_csv());
    }

    #[test]
    fn shape_and_zero_sum_rows() {
        let (modes, drive, grid) = setup(1e-22);
        let g = run_sweep(&modes, &drive, &det(), &grid, 3000, 0.0, 1).unwrap();
        assert_eq!(g.rows(), 4);
        assert_eq!(g.cols(), 255);
        for row in &g.residuals {
            assert_eq!(row.len(), 255);
            let total: f64 = row.iter().sum();
            assert!(total.abs() < 1e-6, "row sum {total}");
        }
        assert!(g
            .gate_delays
            .iter()
            .all(|&d| d >= 0.0 && d < 2.0 * PI / drive.omega_d));
    }

    #[test]
    fn starved_rows_are_flagged() {
        let (modes, drive, grid) = setup(0.0);
        let g = run_sweep(&modes, &drive, &det(), &grid, 2, 0.0, 3).unwrap();
        assert_eq!(g.flagged_rows(), 4);
        assert!(g.residuals[0].iter().all(|v| v.is_nan()));
        assert!(g.residuals_csv().contains("nan"));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (modes, drive, grid) = setup(1e-22);
        assert!(run_sweep(&modes, &drive, &det(), &grid, 0, 0.0, 1).is_err());
        assert!(run_sweep(&modes, &drive, &det(), &[], 10, 0.0, 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let (modes, drive, grid) = setup(1e-22);
        let g = run_sweep(&modes, &drive, &det(), &grid[..1], 500, 0.0, 2).unwrap();
        let csv = g.residuals_csv();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 256);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        let hz: f64 = row[0].parse().unwrap();
        assert!((hz - 867e3).abs() < 1e-6);
    }
}
