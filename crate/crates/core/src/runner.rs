//! Scenario execution: product computation, file output with a checksummed
//! manifest, and declarative verification.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consts::angular_to_hz;
use crate::detection::sample_first_photon;
use crate::error::{Error, Result};
use crate::force::{extract_force, ForceData, ForceFit};
use crate::oscillator::{signed_velocity, ModeParams};
use crate::scenario::{CheckKind, Expectation, Product, Scenario};
use crate::spectroscopy::{
    offset_scan, phase_slope, resolvability, resonance_fwhm, resonance_peaks, rms_spectrum,
    sidelobe_nulls, ResolvabilityReport, SpectrumResult, ENERGY_CONVENTION, PHASE_CONVENTION,
    RMS_CONVENTION,
};
use crate::stats::{dominant_frequency, fit_sinusoid, kolmogorov_q, mean_and_sem};
use crate::sweep::{format_value, run_sweep, splitmix64, ResidualGrid};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
    pub format: OutputFormat,
}

/// Products computed for a scenario. Each entry is `None` when not needed and
/// `Some(Err)` when its computation failed.
#[derive(Debug, Default)]
pub struct Computed {
    pub grid: Option<std::result::Result<ResidualGrid, String>>,
    pub spectrum: Option<std::result::Result<SpectrumResult, String>>,
    pub offsets: Option<std::result::Result<Vec<SpectrumResult>, String>>,
    pub force: Option<std::result::Result<ForceFit, String>>,
    pub resolvability: Option<std::result::Result<ResolvabilityReport, String>>,
}

fn stringify<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid("jobs", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Residual grid of the scenario, with its seed replaced by `seed`.
pub fn scenario_grid(s: &Scenario, seed: u64) -> Result<ResidualGrid> {
    run_sweep(
        &s.modes,
        &s.drive,
        &s.detection,
        &s.freq_grid,
        s.reps,
        s.t_offset,
        seed,
    )
}

fn scenario_spectrum(s: &Scenario) -> Result<SpectrumResult> {
    rms_spectrum(&s.modes, &s.drive, &s.freq_grid, s.rms_window, s.t_offset)
}

fn force_from(
    s: &Scenario,
    grid: Option<&ResidualGrid>,
    spectrum: Option<&SpectrumResult>,
) -> Result<ForceFit> {
    let mode = s.modes[0];
    match (grid, spectrum) {
        (Some(g), _) => extract_force(ForceData::Grid(g), &mode, &s.drive),
        (None, Some(sp)) => extract_force(ForceData::Spectrum(sp), &mode, &s.drive),
        (None, None) => Err(Error::invalid("force_fit", "no data to fit")),
    }
}

/// Computes the requested products in memory.
pub fn compute(s: &Scenario, wanted: &[Product]) -> Computed {
    let want = |p| wanted.contains(&p);
    let mut out = Computed::default();
    let spectral = want(Product::RmsSpectrum)
        || want(Product::EnergySpectrum)
        || want(Product::PhaseTrace)
        || (want(Product::ForceFit) && !want(Product::ResidualGrid));
    if want(Product::ResidualGrid) {
        out.grid = Some(stringify(scenario_grid(s, s.seed)));
    }
    if spectral {
        out.spectrum = Some(stringify(scenario_spectrum(s)));
    }
    if want(Product::OffsetScan) {
        out.offsets = Some(stringify(offset_scan(
            &s.modes,
            &s.drive,
            &s.offsets,
            &s.freq_grid,
            s.rms_window,
        )));
    }
    if want(Product::ForceFit) {
        let grid = out.grid.as_ref().and_then(|g| g.as_ref().ok());
        let spectrum = out.spectrum.as_ref().and_then(|g| g.as_ref().ok());
        out.force = Some(if want(Product::ResidualGrid) && grid.is_none() {
            Err("residual grid failed".to_string())
        } else {
            stringify(force_from(s, grid, spectrum))
        });
    }
    if want(Product::Resolvability) {
        out.resolvability = Some(stringify(resolvability(
            &s.modes,
            &s.drive,
            &s.freq_grid,
            s.rms_window,
            s.t_offset,
            &s.resolvability,
        )));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductStatus {
    pub product: Product,
    pub ok: bool,
    pub error: Option<String>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub scenario_sha256: String,
    pub tool_version: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub products: Vec<ProductStatus>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.products.iter().all(|p| p.ok)
    }

    pub fn failed_products(&self) -> Vec<&'static str> {
        self.products
            .iter()
            .filter(|p| !p.ok)
            .map(|p| p.product.as_str())
            .collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn spectrum_csv(s: &SpectrumResult, columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("drive_freq_hz");
    for (name, _) in columns {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (i, w) in s.freq_grid.iter().enumerate() {
        let _ = write!(out, "{:e}", angular_to_hz(*w));
        for (_, col) in columns {
            let _ = write!(out, ",{}", format_value(col[i]));
        }
        out.push('\n');
    }
    out
}

fn spectrum_metadata(s: &SpectrumResult, scenario: &Scenario) -> serde_json::Value {
    serde_json::json!({
        "product": "spectrum",
        "scenario": scenario.name,
        "points": s.len(),
        "t_det": s.t_det,
        "t_offset": s.t_offset,
        "t_d": s.t_d,
        "modes": scenario.modes,
        "drive": scenario.drive,
        "conventions": {
            "rms_velocity": RMS_CONVENTION,
            "absorbed_energy": ENERGY_CONVENTION,
            "phase_trace_t0": PHASE_CONVENTION,
            "frequency": "drive_freq_hz is the drive frequency in Hz",
        },
    })
}

fn pretty(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// File name and contents for each successful product.
fn render_files(
    s: &Scenario,
    computed: &Computed,
    product: Product,
    format: OutputFormat,
) -> std::result::Result<Vec<(String, String)>, String> {
    let spectrum = || match &computed.spectrum {
        Some(Ok(sp)) => Ok(sp),
        Some(Err(e)) => Err(e.clone()),
        None => Err("spectrum not computed".to_string()),
    };
    let json = |v: &serde_json::Value| pretty(v).map_err(|e| e.to_string());
    let mut files = Vec::new();
    match product {
        Product::ResidualGrid => {
            let g = match computed.grid.as_ref().expect("grid requested") {
                Ok(g) => g,
                Err(e) => return Err(e.clone()),
            };
            match format {
                OutputFormat::Csv => {
                    files.push(("residual_grid.csv".into(), g.residuals_csv()));
                    files.push(("residual_grid_counts.csv".into(), g.counts_csv()));
                    files.push(("residual_grid.json".into(), json(&g.sidecar())?));
                }
                OutputFormat::Json => {
                    let mut v = g.sidecar();
                    v["time_bins"] = serde_json::json!(g.time_bins);
                    v["residuals"] = serde_json::json!(g.residuals);
                    v["counts"] = serde_json::json!(g.counts);
                    files.push(("residual_grid.json".into(), json(&v)?));
                }
            }
        }
        Product::RmsSpectrum | Product::EnergySpectrum | Product::PhaseTrace => {
            let sp = spectrum()?;
            let (stem, column, values): (&str, &str, &[f64]) = match product {
                Product::RmsSpectrum => ("rms_spectrum", "rms_velocity_m_s", &sp.rms_velocity),
                Product::EnergySpectrum => {
                    ("energy_spectrum", "absorbed_energy_j", &sp.absorbed_energy)
                }
                _ => ("phase_trace", "phase_t0_rad", &sp.phase_trace_t0),
            };
            let mut meta = spectrum_metadata(sp, s);
            meta["product"] = serde_json::json!(stem);
            match format {
                OutputFormat::Csv => {
                    files.push((format!("{stem}.csv"), spectrum_csv(sp, &[(column, values)])));
                    files.push((format!("{stem}.json"), json(&meta)?));
                }
                OutputFormat::Json => {
                    meta["drive_freq_hz"] = serde_json::json!(sp
                        .freq_grid
                        .iter()
                        .map(|w| angular_to_hz(*w))
                        .collect::<Vec<_>>());
                    meta[column] = serde_json::json!(values);
                    files.push((format!("{stem}.json"), json(&meta)?));
                }
            }
        }
        Product::OffsetScan => {
            let scans = match computed.offsets.as_ref().expect("offset scan requested") {
                Ok(v) => v,
                Err(e) => return Err(e.clone()),
            };
            let first = &scans[0];
            let names: Vec<String> = s
                .offsets
                .iter()
                .map(|o| format!("rms_offset_{o:e}_s"))
                .collect();
            let columns: Vec<(&str, &[f64])> = names
                .iter()
                .zip(scans)
                .map(|(n, sp)| (n.as_str(), sp.rms_velocity.as_slice()))
                .collect();
            let mut meta = spectrum_metadata(first, s);
            meta["product"] = serde_json::json!("offset_scan");
            meta["offsets"] = serde_json::json!(s.offsets);
            match format {
                OutputFormat::Csv => {
                    files.push(("offset_scan.csv".into(), spectrum_csv(first, &columns)));
                    files.push(("offset_scan.json".into(), json(&meta)?));
                }
                OutputFormat::Json => {
                    meta["drive_freq_hz"] = serde_json::json!(first
                        .freq_grid
                        .iter()
                        .map(|w| angular_to_hz(*w))
                        .collect::<Vec<_>>());
                    meta["rms_velocity_m_s"] = serde_json::json!(scans
                        .iter()
                        .map(|sp| &sp.rms_velocity)
                        .collect::<Vec<_>>());
                    files.push(("offset_scan.json".into(), json(&meta)?));
                }
            }
        }
        Product::ForceFit => {
            let f = match computed.force.as_ref().expect("force fit requested") {
                Ok(f) => f,
                Err(e) => return Err(e.clone()),
            };
            let v = serde_json::json!({
                "product": "force_fit",
                "true_force": s.drive.force,
                "fit": f,
                "force_yn": f.force / crate::consts::YOCTONEWTON,
                "omega_z_hz": angular_to_hz(f.omega_z),
            });
            files.push(("force_fit.json".into(), json(&v)?));
        }
        Product::Resolvability => {
            let r = match computed
                .resolvability
                .as_ref()
                .expect("resolvability requested")
            {
                Ok(r) => r,
                Err(e) => return Err(e.clone()),
            };
            let mut v = serde_json::to_value(r).map_err(|e| e.to_string())?;
            v["product"] = serde_json::json!("resolvability");
            v["mode_spacing_hz"] = serde_json::json!(angular_to_hz(r.mode_spacing));
            files.push(("resolvability.json".into(), json(&v)?));
        }
    }
    Ok(files)
}

/// Runs every requested product, writes outputs and `manifest.json` into
/// `out_dir`, and returns the manifest. Product failures are recorded in the
/// manifest; only I/O failures abort.
pub fn run(s: &Scenario, out_dir: &Path, options: &RunOptions) -> Result<RunManifest> {
    let started = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let computed = in_pool(options.jobs, || compute(s, &s.outputs))?;

    let mut products = Vec::new();
    let mut files = Vec::new();
    for &product in &s.outputs {
        match render_files(s, &computed, product, options.format) {
            Ok(list) => {
                let mut names = Vec::new();
                for (name, contents) in list {
                    let path = out_dir.join(&name);
                    std::fs::write(&path, contents.as_bytes()).map_err(|e| Error::io(&path, e))?;
                    files.push(FileEntry {
                        path: name.clone(),
                        sha256: sha256_hex(contents.as_bytes()),
                        bytes: contents.len() as u64,
                    });
                    names.push(name);
                }
                products.push(ProductStatus {
                    product,
                    ok: true,
                    error: None,
                    files: names,
                });
            }
            Err(e) => {
                log::error!("{}: {e}", product.as_str());
                products.push(ProductStatus {
                    product,
                    ok: false,
                    error: Some(e),
                    files: Vec::new(),
                });
            }
        }
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        scenario: s.name.clone(),
        scenario_sha256: s.source_sha256.clone(),
        tool_version: TOOL_VERSION.to_string(),
        seed: s.seed,
        started,
        finished: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        products,
        files,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Re-hashes every file listed in a manifest; returns the paths that are
/// missing or whose checksum differs.
pub fn verify_manifest(out_dir: &Path) -> Result<Vec<String>> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    Ok(manifest
        .files
        .iter()
        .filter(|f| {
            std::fs::read(out_dir.join(&f.path))
                .map(|bytes| sha256_hex(&bytes) != f.sha256)
                .unwrap_or(true)
        })
        .map(|f| f.path.clone())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub check: CheckKind,
    pub status: CheckStatus,
    pub measured: Option<f64>,
    pub expected: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }
}

/// Products a check reads.
pub fn required_products(check: &Expectation) -> Vec<Product> {
    use CheckKind::*;
    match check.check {
        PeakLocation | LinewidthRatio | NullDepth => vec![Product::RmsSpectrum],
        PhaseSlope => vec![Product::PhaseTrace],
        KsNull | ResidualZeroMean | ResidualNeutrality | BandPeriod | BandPhaseSlope
        | ForceBias => {
            vec![Product::ResidualGrid]
        }
        ForceRecovery => vec![Product::ForceFit],
        TroughContrast | Distinguishability => vec![Product::Resolvability],
        OffsetSuppression => vec![Product::OffsetScan],
        PeakCount => vec![check.product.unwrap_or(Product::RmsSpectrum)],
    }
}

struct Outcome {
    pass: bool,
    measured: f64,
    expected: String,
    detail: String,
}

fn outcome(
    pass: bool,
    measured: f64,
    expected: impl Into<String>,
    detail: impl Into<String>,
) -> Outcome {
    Outcome {
        pass,
        measured,
        expected: expected.into(),
        detail: detail.into(),
    }
}

fn ok_ref<'a, T>(
    slot: &'a Option<std::result::Result<T, String>>,
    what: &str,
) -> std::result::Result<&'a T, String> {
    match slot {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(format!("{what} failed: {e}")),
        None => Err(format!("{what} not computed")),
    }
}

/// Evaluates the scenario's expectations, optionally restricted to those whose
/// label or kind starts with `only`.
pub fn verify(s: &Scenario, only: Option<&str>, jobs: Option<usize>) -> Result<VerifyReport> {
    if s.expectations.is_empty() {
        return Err(Error::invalid(
            "expectations",
            format!("scenario `{}` declares no expectations", s.name),
        ));
    }
    let selected: Vec<&Expectation> = s
        .expectations
        .iter()
        .filter(|e| {
            only.is_none_or(|o| e.label().starts_with(o) || e.check.as_str().starts_with(o))
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid(
            "only",
            format!("no check matches `{}`", only.unwrap_or_default()),
        ));
    }
    let mut needed: Vec<Product> = selected
        .iter()
        .flat_map(|e| required_products(e))
        .filter(|p| s.wants(*p))
        .collect();
    needed.sort();
    needed.dedup();

    in_pool(jobs, || {
        let computed = compute(s, &needed);
        let checks = selected
            .iter()
            .map(|e| {
                let missing: Vec<&str> = required_products(e)
                    .into_iter()
                    .filter(|p| !s.wants(*p))
                    .map(Product::as_str)
                    .collect();
                let result = if missing.is_empty() {
                    evaluate(s, &computed, e)
                } else {
                    Err(format!("scenario does not emit {}", missing.join(", ")))
                };
                match result {
                    Ok(o) => CheckResult {
                        name: e.label().to_string(),
                        check: e.check,
                        status: if o.pass {
                            CheckStatus::Pass
                        } else {
                            CheckStatus::Fail
                        },
                        measured: Some(o.measured),
                        expected: o.expected,
                        detail: o.detail,
                    },
                    Err(msg) => CheckResult {
                        name: e.label().to_string(),
                        check: e.check,
                        status: CheckStatus::Error,
                        measured: None,
                        expected: String::new(),
                        detail: msg,
                    },
                }
            })
            .collect();
        VerifyReport {
            scenario: s.name.clone(),
            seed: s.seed,
            checks,
        }
    })
}

fn evaluate(s: &Scenario, c: &Computed, e: &Expectation) -> std::result::Result<Outcome, String> {
    use CheckKind::*;
    let tol = |default: f64| e.tolerance.unwrap_or(default);
    match e.check {
        PeakLocation => {
            let sp = ok_ref(&c.spectrum, "rms spectrum")?;
            let (i, _) = sp
                .rms_velocity
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .ok_or("empty spectrum")?;
            let measured = angular_to_hz(sp.freq_grid[i]);
            let expected = e.expected.unwrap_or(angular_to_hz(s.center_frequency()));
            let t = tol(angular_to_hz(
                s.freq_grid[1.min(s.freq_grid.len() - 1)] - s.freq_grid[0],
            ));
            Ok(outcome(
                (measured - expected).abs() <= t,
                measured,
                format!("{expected} ± {t} Hz"),
                "frequency of the largest RMS velocity on the grid",
            ))
        }
        LinewidthRatio => {
            let mode = single_mode(s)?;
            let d2 = crate::oscillator::DriveConfig {
                t_d: 2.0 * s.drive.t_d,
                ..s.drive
            };
            let w1 = resonance_fwhm(&mode, &s.drive).map_err(|e| e.to_string())?;
            let w2 = resonance_fwhm(&mode, &d2).map_err(|e| e.to_string())?;
            let ratio = w1 / w2;
            let expected = e.expected.unwrap_or(2.0);
            let t = tol(0.02);
            Ok(outcome(
                (ratio / expected - 1.0).abs() <= t,
                ratio,
                format!("{expected} ± {}%", t * 100.0),
                format!(
                    "FWHM {:.3} Hz at t_d, {:.3} Hz at 2 t_d",
                    angular_to_hz(w1),
                    angular_to_hz(w2)
                ),
            ))
        }
        NullDepth => {
            let mode = single_mode(s)?;
            let n_max = e.n_max.unwrap_or(5);
            let peak = signed_velocity(&mode, &s.drive.at_frequency(mode.omega_z)).abs();
            let nulls = sidelobe_nulls(&mode, &s.drive, n_max).map_err(|e| e.to_string())?;
            let worst = nulls
                .iter()
                .map(|&w| signed_velocity(&mode, &s.drive.at_frequency(w)).abs() / peak)
                .fold(0.0, f64::max);
            let t = tol(1e-12);
            Ok(outcome(
                worst < t,
                worst,
                format!("< {t:e} of peak"),
                format!(
                    "largest |v| over {} nulls relative to resonance",
                    nulls.len()
                ),
            ))
        }
        PhaseSlope => {
            let sp = ok_ref(&c.spectrum, "phase trace")?;
            let slope = phase_slope(sp, 0.5).ok_or("too few points in the main lobe")?;
            let expected = e.expected.unwrap_or(0.5 * s.drive.t_d + s.t_offset);
            let t = tol(0.01);
            Ok(outcome(
                (slope / expected - 1.0).abs() <= t,
                slope,
                format!("{expected:.6e} s ± {}%", t * 100.0),
                "least-squares slope of the t = 0 phase over the main lobe",
            ))
        }
        KsNull => {
            let draws = e.draws.unwrap_or(100_000);
            let alpha = e.alpha.unwrap_or(0.01);
            let (d, n) = ks_null_statistic(s, draws);
            let p = ks_one_sample_p(d, n);
            Ok(outcome(
                p >= alpha,
                p,
                format!("p >= {alpha}"),
                format!("D = {d:.5} over {n} arrivals vs. the truncated exponential"),
            ))
        }
        ResidualZeroMean => {
            let g = ok_ref(&c.grid, "residual grid")?;
            let mut worst: f64 = 0.0;
            let mut rows = 0;
            for (row, flag) in g.residuals.iter().zip(&g.flags) {
                if flag.is_some() {
                    continue;
                }
                let (mean, sem) = mean_and_sem(row).ok_or("row too short")?;
                worst = worst.max(if sem > 0.0 { mean.abs() / sem } else { 0.0 });
                rows += 1;
            }
            if rows == 0 {
                return Err("every row is flagged".into());
            }
            Ok(outcome(
                worst < 2.0,
                worst,
                "|mean| < 2 standard errors in every row",
                format!("largest |mean|/SE over {rows} rows"),
            ))
        }
        ResidualNeutrality => {
            let g = ok_ref(&c.grid, "residual grid")?;
            let (mut outliers, mut total) = (0usize, 0usize);
            for ((row, fit), counts) in g.residuals.iter().zip(&g.fit_params).zip(&g.counts) {
                let Some(fit) = fit else { continue };
                for ((r, t), _) in row.iter().zip(&g.time_bins).zip(counts) {
                    let sigma = fit.eval(*t).max(1.0).sqrt();
                    total += 1;
                    if r.abs() > 3.0 * sigma {
                        outliers += 1;
                    }
                }
            }
            if total == 0 {
                return Err("every row is flagged".into());
            }
            let frac = outliers as f64 / total as f64;
            let t = tol(0.01);
            Ok(outcome(
                frac < t,
                frac,
                format!("< {t}"),
                format!("{outliers} of {total} bins beyond 3 sigma"),
            ))
        }
        BandPeriod => {
            let g = ok_ref(&c.grid, "residual grid")?;
            let row = strongest_row(g, s.modes[0].omega_z).ok_or("no usable rows")?;
            let hi = PI / s.detection.bin_width * 0.9;
            let lo = 2.0 * PI / (s.detection.window - s.detection.dead_time) * 2.0;
            let w = dominant_frequency(&g.time_bins, &g.residuals[row], lo, hi, 4000)
                .ok_or("no dominant frequency")?;
            let period = 2.0 * PI / w;
            let expected = 2.0 * PI / s.modes[0].omega_z;
            let t = tol(0.05);
            Ok(outcome(
                (period / expected - 1.0).abs() <= t,
                period,
                format!("{expected:.6e} s ± {}%", t * 100.0),
                format!(
                    "dominant period along arrival time at {:.1} Hz drive",
                    angular_to_hz(g.drive_frequencies[row])
                ),
            ))
        }
        BandPhaseSlope => {
            let g = ok_ref(&c.grid, "residual grid")?;
            let slope = band_phase_slope(g, s.modes[0].omega_z).ok_or("too few banded rows")?;
            let expected = 0.5 * s.drive.t_d;
            let t = tol(0.10);
            Ok(outcome(
                (slope.abs() / expected - 1.0).abs() <= t,
                slope,
                format!("|slope| = {expected:.6e} s ± {}%", t * 100.0),
                "slope of the fitted band phase against drive frequency across the main lobe",
            ))
        }
        ForceRecovery => {
            let f = ok_ref(&c.force, "force fit")?;
            let rel = f.force / s.drive.force - 1.0;
            let t = tol(0.10);
            Ok(outcome(
                rel.abs() <= t,
                f.force,
                format!("{:.4e} N ± {}%", s.drive.force, t * 100.0),
                format!("relative error {rel:+.4}, fit sigma {:e} N", f.force_sigma),
            ))
        }
        ForceBias => {
            let seeds = e.seeds.unwrap_or(100);
            let (bias, sem, failures) = force_bias(s, seeds);
            if failures == seeds {
                return Err("every fit failed".into());
            }
            let t = tol(0.03);
            Ok(outcome(
                bias.abs() < t && failures == 0,
                bias,
                format!("|mean relative bias| < {t}"),
                format!("{seeds} seeds, standard error {sem:.4}, {failures} failed fits"),
            ))
        }
        TroughContrast => {
            let r = ok_ref(&c.resolvability, "resolvability")?;
            Ok(outcome(
                r.trough_depth_coherent > r.trough_depth_incoherent,
                r.trough_depth_coherent - r.trough_depth_incoherent,
                "coherent trough deeper than incoherent",
                format!(
                    "coherent {:.4}, incoherent {:.4}",
                    r.trough_depth_coherent, r.trough_depth_incoherent
                ),
            ))
        }
        Distinguishability => {
            let r = ok_ref(&c.resolvability, "resolvability")?;
            let expect = e.expect.unwrap_or(true);
            Ok(outcome(
                r.distinguishable == expect,
                if r.distinguishable { 1.0 } else { 0.0 },
                format!("distinguishable = {expect}"),
                format!(
                    "energy peaks {}, coherent peaks {}, phase reversals {}",
                    r.peak_count, r.peak_count_coherent, r.phase_reversals
                ),
            ))
        }
        OffsetSuppression => {
            let spacing = s.mode_spacing().ok_or("needs two modes")?;
            let min_ratio = e.min_ratio.unwrap_or(10.0);
            let t = tol(1e-9);
            let center = [s.center_frequency()];
            let at = |off: f64| {
                rms_spectrum(&s.modes, &s.drive, &center, s.rms_window, off)
                    .map(|sp| sp.rms_velocity[0])
                    .map_err(|e| e.to_string())
            };
            let r0 = at(0.0)?;
            let r_half = at(PI / spacing)?;
            let r_full = at(2.0 * PI / spacing)?;
            let ratio = r0 / r_half;
            let drift = (r_full / r0 - 1.0).abs();
            Ok(outcome(
                ratio >= min_ratio && drift <= t,
                ratio,
                format!("suppression >= {min_ratio}, revival within {t:e}"),
                format!("rms at 0, pi/D, 2pi/D: {r0:e}, {r_half:e}, {r_full:e}; revival error {drift:e}"),
            ))
        }
        PeakCount => {
            let sp = ok_ref(&c.spectrum, "spectrum")?;
            let product = e.product.unwrap_or(Product::RmsSpectrum);
            let values = match product {
                Product::RmsSpectrum => &sp.rms_velocity,
                Product::EnergySpectrum => &sp.absorbed_energy,
                other => return Err(format!("peak_count does not apply to {}", other.as_str())),
            };
            let n = resonance_peaks(values, &s.resolvability).len().max(1);
            let expected = e.expected.ok_or("peak_count needs `expected`")?;
            Ok(outcome(
                n as f64 == expected,
                n as f64,
                format!("{expected}"),
                format!("resonance peaks in {}", product.as_str()),
            ))
        }
    }
}

fn single_mode(s: &Scenario) -> std::result::Result<ModeParams, String> {
    match s.modes.as_slice() {
        [m] => Ok(*m),
        _ => Err("check needs a single-mode scenario".into()),
    }
}

/// Row with the largest band amplitude at `omega`.
fn strongest_row(g: &ResidualGrid, omega: f64) -> Option<usize> {
    (0..g.rows())
        .filter(|&k| g.flags[k].is_none())
        .filter_map(|k| fit_sinusoid(&g.time_bins, &g.residuals[k], omega).map(|f| (k, f.0)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

/// Slope of the band phase (sinusoid fit at `omega` per row) against drive
/// frequency, over rows whose band amplitude exceeds half the largest.
pub fn band_phase_slope(g: &ResidualGrid, omega: f64) -> Option<f64> {
    let fits: Vec<(f64, f64, f64)> = (0..g.rows())
        .filter(|&k| g.flags[k].is_none())
        .filter_map(|k| {
            fit_sinusoid(&g.time_bins, &g.residuals[k], omega)
                .map(|f| (g.drive_frequencies[k], f.0, f.1))
        })
        .collect();
    let max = fits.iter().map(|f| f.1).fold(0.0, f64::max);
    // Longest contiguous run of strong rows around the strongest one.
    let peak = fits.iter().position(|f| f.1 == max)?;
    let strong = |i: usize| fits[i].1 >= 0.5 * max;
    let mut lo = peak;
    while lo > 0 && strong(lo - 1) {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < fits.len() && strong(hi + 1) {
        hi += 1;
    }
    let raw: Vec<f64> = fits[lo..=hi].iter().map(|f| f.2).collect();
    let phases = crate::spectroscopy::unwrap_phase(&raw);
    let pts: Vec<(f64, f64)> = fits[lo..=hi].iter().map(|f| f.0).zip(phases).collect();
    crate::spectroscopy::linear_slope(&pts)
}

/// Kolmogorov p-value for a one-sample statistic, with Stephens' correction.
pub fn ks_one_sample_p(d: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS statistic of zero-velocity first-photon times against the
/// exponential CDF truncated at the detection window.
pub fn ks_null_statistic(s: &Scenario, draws: usize) -> (f64, usize) {
    let det = crate::detection::DetectionConfig {
        damping: 0.0,
        ..s.detection
    };
    let rate = det.rest_rate();
    let norm = 1.0 - (-rate * det.window).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(s.seed ^ 0x6B73_6E75_6C6C));
    let mut times: Vec<f64> = (0..draws)
        .filter_map(|_| sample_first_photon(|_| 0.0, &det, &mut rng))
        .collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let d = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = (1.0 - (-rate * t).exp()) / norm;
            (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
        })
        .fold(0.0, f64::max);
    (d, n)
}

/// Mean and standard error of the relative force error over `seeds`
/// independent grids, plus the number of failed fits.
pub fn force_bias(s: &Scenario, seeds: usize) -> (f64, f64, usize) {
    use rayon::prelude::*;
    let results: Vec<Option<f64>> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = splitmix64(s.seed.wrapping_add(i as u64));
            let grid = scenario_grid(s, seed).ok()?;
            let fit = extract_force(ForceData::Grid(&grid), &s.modes[0], &s.drive).ok()?;
            Some(fit.force / s.drive.force - 1.0)
        })
        .collect();
    let errs: Vec<f64> = results.iter().flatten().copied().collect();
    let failures = seeds - errs.len();
    let (mean, sem) =
        mean_and_sem(&errs).unwrap_or((errs.first().copied().unwrap_or(f64::NAN), f64::NAN));
    (mean, sem, failures)
}

/// Single-line-per-check plain-text rendering of a report.
pub fn format_report(report: &VerifyReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Error => "ERROR",
        };
        let measured = c.measured.map_or("-".to_string(), |m| format!("{m:e}"));
        let _ = writeln!(
            out,
            "{status:5} {:24} measured {measured:>14}  expected {}  ({})",
            c.name, c.expected, c.detail
        );
    }
    out
}

/// Files in a run directory other than the manifest, mapped to their bytes.
pub fn output_files(out_dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))? {
        let entry = entry.map_err(|e| Error::io(out_dir, e))?;
        let name = PathBuf::from(entry.file_name());
        if name.as_os_str() == MANIFEST_FILE {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        map.insert(name, bytes);
    }
    Ok(map)
}
