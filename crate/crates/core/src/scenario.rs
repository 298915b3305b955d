//! Declarative scenario files.
//!
//! Scenarios are TOML with unit-suffixed keys (`freq_hz`, `force_yn`, ...);
//! keys without a suffix are SI. Everything is converted to SI with angular
//! frequencies on load. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consts::{hz_to_angular, AMU, YOCTONEWTON};
use crate::detection::{DetectionConfig, Lineshape};
use crate::error::{Error, Result};
use crate::oscillator::{DriveConfig, ModeParams};
use crate::spectroscopy::ResolvabilityCriterion;

pub const SCHEMA_VERSION: u32 = 1;

const BUNDLED: &[(&str, &str)] = &[
    (
        "fig3_resonance",
        include_str!("../scenarios/fig3_resonance.toml"),
    ),
    (
        "fig3_resonance_200us",
        include_str!("../scenarios/fig3_resonance_200us.toml"),
    ),
    (
        "fig3_resonance_400us",
        include_str!("../scenarios/fig3_resonance_400us.toml"),
    ),
    (
        "fig4_two_mode",
        include_str!("../scenarios/fig4_two_mode.toml"),
    ),
    (
        "fig4_two_mode_d4",
        include_str!("../scenarios/fig4_two_mode_d4.toml"),
    ),
    (
        "fig4_two_mode_d2",
        include_str!("../scenarios/fig4_two_mode_d2.toml"),
    ),
    (
        "fig4_two_mode_d0p5",
        include_str!("../scenarios/fig4_two_mode_d0p5.toml"),
    ),
    (
        "fig4_two_mode_d0p25",
        include_str!("../scenarios/fig4_two_mode_d0p25.toml"),
    ),
    (
        "fig4_offset_interference",
        include_str!("../scenarios/fig4_offset_interference.toml"),
    ),
    (
        "null_experiment",
        include_str!("../scenarios/null_experiment.toml"),
    ),
    (
        "force_calibration",
        include_str!("../scenarios/force_calibration.toml"),
    ),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Product {
    ResidualGrid,
    RmsSpectrum,
    EnergySpectrum,
    PhaseTrace,
    OffsetScan,
    ForceFit,
    Resolvability,
}

impl Product {
    pub fn as_str(self) -> &'static str {
        match self {
            Product::ResidualGrid => "residual_grid",
            Product::RmsSpectrum => "rms_spectrum",
            Product::EnergySpectrum => "energy_spectrum",
            Product::PhaseTrace => "phase_trace",
            Product::OffsetScan => "offset_scan",
            Product::ForceFit => "force_fit",
            Product::Resolvability => "resolvability",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    PeakLocation,
    LinewidthRatio,
    NullDepth,
    PhaseSlope,
    KsNull,
    ResidualZeroMean,
    ResidualNeutrality,
    BandPeriod,
    BandPhaseSlope,
    ForceRecovery,
    ForceBias,
    TroughContrast,
    Distinguishability,
    OffsetSuppression,
    PeakCount,
}

impl CheckKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckKind::PeakLocation => "peak_location",
            CheckKind::LinewidthRatio => "linewidth_ratio",
            CheckKind::NullDepth => "null_depth",
            CheckKind::PhaseSlope => "phase_slope",
            CheckKind::KsNull => "ks_null",
            CheckKind::ResidualZeroMean => "residual_zero_mean",
            CheckKind::ResidualNeutrality => "residual_neutrality",
            CheckKind::BandPeriod => "band_period",
            CheckKind::BandPhaseSlope => "band_phase_slope",
            CheckKind::ForceRecovery => "force_recovery",
            CheckKind::ForceBias => "force_bias",
            CheckKind::TroughContrast => "trough_contrast",
            CheckKind::Distinguishability => "distinguishability",
            CheckKind::OffsetSuppression => "offset_suppression",
            CheckKind::PeakCount => "peak_count",
        }
    }
}

/// One declarative check. Fields not used by a check kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub check: CheckKind,
    /// Label for reports and `--only`; defaults to the check kind.
    pub name: Option<String>,
    pub tolerance: Option<f64>,
    pub expected: Option<f64>,
    pub min_ratio: Option<f64>,
    pub n_max: Option<usize>,
    pub draws: Option<usize>,
    pub alpha: Option<f64>,
    pub product: Option<Product>,
    pub seeds: Option<usize>,
    pub expect: Option<bool>,
}

impl Expectation {
    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.check.as_str())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    name: String,
    description: Option<String>,
    seed: u64,
    reps: u64,
    outputs: Vec<Product>,
    modes: Vec<RawMode>,
    drive: RawDrive,
    detection: RawDetection,
    sweep: RawSweep,
    analysis: Option<RawAnalysis>,
    resolvability: Option<ResolvabilityCriterion>,
    #[serde(default)]
    expectations: Vec<Expectation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    freq_hz: f64,
    mass_amu: f64,
    #[serde(default = "one")]
    weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrive {
    force_yn: f64,
    #[serde(default)]
    psi_rad: f64,
    /// s
    t_d: f64,
    /// Delay from drive end to detection start, s.
    #[serde(default)]
    offset: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    /// photons/s
    base_rate: f64,
    detuning_hz: f64,
    linewidth_hz: f64,
    wavelength_nm: f64,
    /// Cosine of the angle between the detection beam and the motion axis.
    #[serde(default = "one")]
    projection: f64,
    /// 1/s
    #[serde(default)]
    damping: f64,
    dead_time: f64,
    window: f64,
    bin_width: f64,
    #[serde(default)]
    lineshape: Lineshape,
    #[serde(default)]
    phase_jitter_rad: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    start_hz: f64,
    stop_hz: f64,
    step_hz: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    /// RMS averaging window, s.
    rms_window: Option<f64>,
    /// Offsets for the offset scan, s.
    offsets: Option<Vec<f64>>,
    /// Offsets as multiples of the two-mode interference period 2π/Δ.
    offsets_spacing_periods: Option<Vec<f64>>,
}

/// A validated scenario in SI units with angular frequencies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub seed: u64,
    pub reps: u64,
    pub outputs: Vec<Product>,
    pub modes: Vec<ModeParams>,
    pub drive: DriveConfig,
    pub t_offset: f64,
    pub detection: DetectionConfig,
    /// rad/s
    pub freq_grid: Vec<f64>,
    pub rms_window: f64,
    /// s
    pub offsets: Vec<f64>,
    pub resolvability: ResolvabilityCriterion,
    pub expectations: Vec<Expectation>,
    /// Hex SHA-256 of the scenario text.
    pub source_sha256: String,
}

impl Scenario {
    pub fn wants(&self, product: Product) -> bool {
        self.outputs.contains(&product)
    }

    /// Δ for a two-mode scenario.
    pub fn mode_spacing(&self) -> Option<f64> {
        (self.modes.len() == 2).then(|| (self.modes[1].omega_z - self.modes[0].omega_z).abs())
    }

    /// Midpoint of the mode frequencies.
    pub fn center_frequency(&self) -> f64 {
        self.modes.iter().map(|m| m.omega_z).sum::<f64>() / self.modes.len() as f64
    }
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(schema(path, format!("must be positive, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(schema(path, format!("must be non-negative, got {v}")))
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(schema(path, format!("must be finite, got {v}")))
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = toml::Deserializer::parse(text).map_err(|e| schema("", e.message().to_string()))?;
    let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(
            if path == "." { "" } else { &path },
            e.inner().message().to_string(),
        )
    })?;
    let mut s = convert(raw)?;
    s.source_sha256 = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(s)
}

fn convert(raw: RawScenario) -> Result<Scenario> {
    if raw.schema_version != SCHEMA_VERSION {
        return Err(schema(
            "schema_version",
            format!(
                "unsupported version {}, expected {SCHEMA_VERSION}",
                raw.schema_version
            ),
        ));
    }
    if raw.name.trim().is_empty() {
        return Err(schema("name", "must not be empty"));
    }
    if raw.reps == 0 {
        return Err(schema("reps", "must be at least 1"));
    }
    if raw.outputs.is_empty() {
        return Err(schema("outputs", "must request at least one product"));
    }
    if raw.modes.is_empty() {
        return Err(schema("modes", "at least one mode is required"));
    }

    let mut modes = Vec::with_capacity(raw.modes.len());
    for (i, m) in raw.modes.iter().enumerate() {
        positive(&format!("modes[{i}].freq_hz"), m.freq_hz)?;
        positive(&format!("modes[{i}].mass_amu"), m.mass_amu)?;
        if !(m.weight.is_finite() && (0.0..=1.0).contains(&m.weight)) {
            return Err(schema(&format!("modes[{i}].weight"), "must lie in [0, 1]"));
        }
        modes.push(ModeParams {
            omega_z: hz_to_angular(m.freq_hz),
            mass: m.mass_amu * AMU,
            weight: m.weight,
        });
    }

    let d = &raw.drive;
    non_negative("drive.force_yn", d.force_yn)?;
    finite("drive.psi_rad", d.psi_rad)?;
    positive("drive.t_d", d.t_d)?;
    non_negative("drive.offset", d.offset)?;

    let sw = &raw.sweep;
    positive("sweep.start_hz", sw.start_hz)?;
    positive("sweep.step_hz", sw.step_hz)?;
    finite("sweep.stop_hz", sw.stop_hz)?;
    if sw.stop_hz <= sw.start_hz {
        return Err(schema("sweep.stop_hz", "must exceed sweep.start_hz"));
    }
    let n = ((sw.stop_hz - sw.start_hz) / sw.step_hz + 1e-9).floor() as usize + 1;
    if n > 1_000_000 {
        return Err(schema("sweep.step_hz", format!("gives {n} points")));
    }
    let freq_grid: Vec<f64> = (0..n)
        .map(|i| hz_to_angular(sw.start_hz + sw.step_hz * i as f64))
        .collect();
    let drive = DriveConfig {
        force: d.force_yn * YOCTONEWTON,
        omega_d: freq_grid[n / 2],
        psi: d.psi_rad,
        t_d: d.t_d,
    };

    let det = &raw.detection;
    positive("detection.base_rate", det.base_rate)?;
    finite("detection.detuning_hz", det.detuning_hz)?;
    positive("detection.linewidth_hz", det.linewidth_hz)?;
    positive("detection.wavelength_nm", det.wavelength_nm)?;
    finite("detection.projection", det.projection)?;
    non_negative("detection.damping", det.damping)?;
    non_negative("detection.dead_time", det.dead_time)?;
    positive("detection.window", det.window)?;
    positive("detection.bin_width", det.bin_width)?;
    non_negative("detection.phase_jitter_rad", det.phase_jitter_rad)?;
    if det.bin_width >= det.window {
        return Err(schema(
            "detection.bin_width",
            "must be shorter than the window",
        ));
    }
    if det.dead_time + det.bin_width > det.window {
        return Err(schema(
            "detection.dead_time",
            "leaves no complete bin in the window",
        ));
    }
    let detection = DetectionConfig {
        base_rate: det.base_rate,
        detuning: hz_to_angular(det.detuning_hz),
        linewidth: hz_to_angular(det.linewidth_hz),
        k_detect: 2.0 * std::f64::consts::PI / (det.wavelength_nm * 1e-9) * det.projection,
        damping: det.damping,
        dead_time: det.dead_time,
        window: det.window,
        bin_width: det.bin_width,
        lineshape: det.lineshape,
        phase_jitter: det.phase_jitter_rad,
    };

    let analysis = raw.analysis.unwrap_or_default();
    let rms_window = analysis.rms_window.unwrap_or(detection.window);
    positive("analysis.rms_window", rms_window)?;
    let mut offsets = Vec::new();
    if let Some(list) = &analysis.offsets {
        for (i, &o) in list.iter().enumerate() {
            non_negative(&format!("analysis.offsets[{i}]"), o)?;
            offsets.push(o);
        }
    }
    if let Some(list) = &analysis.offsets_spacing_periods {
        if modes.len() != 2 || modes[0].omega_z == modes[1].omega_z {
            return Err(schema(
                "analysis.offsets_spacing_periods",
                "needs two modes with distinct frequencies",
            ));
        }
        let period = 2.0 * std::f64::consts::PI / (modes[1].omega_z - modes[0].omega_z).abs();
        for (i, &o) in list.iter().enumerate() {
            non_negative(&format!("analysis.offsets_spacing_periods[{i}]"), o)?;
            offsets.push(o * period);
        }
    }
    if offsets.is_empty() {
        offsets.push(d.offset);
    }
    let outputs = {
        let mut o = raw.outputs.clone();
        o.sort();
        o.dedup();
        o
    };
    if outputs.contains(&Product::Resolvability) && modes.len() != 2 {
        return Err(schema("outputs", "resolvability needs exactly two modes"));
    }

    for (i, e) in raw.expectations.iter().enumerate() {
        for (key, v) in [
            ("tolerance", e.tolerance),
            ("expected", e.expected),
            ("min_ratio", e.min_ratio),
            ("alpha", e.alpha),
        ] {
            if let Some(v) = v {
                finite(&format!("expectations[{i}].{key}"), v)?;
            }
        }
    }

    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        seed: raw.seed,
        reps: raw.reps,
        outputs,
        modes,
        drive,
        t_offset: d.offset,
        detection,
        freq_grid,
        rms_window,
        offsets,
        resolvability: raw.resolvability.unwrap_or_default(),
        expectations: raw.expectations,
        source_sha256: String::new(),
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(name, _)| *name)
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_bundled(name: &str) -> Result<Scenario> {
    let text = bundled_source(name).ok_or_else(|| Error::UnknownScenario(name.to_string()))?;
    parse_scenario(text)
}

/// A bundled scenario by name, otherwise a file path.
pub fn resolve(name_or_path: &str) -> Result<Scenario> {
    match bundled_source(name_or_path) {
        Some(text) => parse_scenario(text),
        None => load_scenario(Path::new(name_or_path)),
    }
}
