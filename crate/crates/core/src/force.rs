//! Drive-force extraction by fitting the driven-velocity resonance.
//!
//! Spectra carry the velocity phasor directly. Residual grids are first
//! reduced to one velocity phasor per drive frequency by fitting the exact
//! first-photon arrival model to the raw counts; the phasors are then fitted
//! like a spectrum.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detection::{last_start_pulse, scatter_rate, scatter_rate_slope, DetectionConfig};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LeastSquaresProblem, LmConfig};
use crate::oscillator::{signed_velocity, signed_velocity_gradient, DriveConfig, ModeParams};
use crate::spectroscopy::SpectrumResult;
use crate::sweep::ResidualGrid;

pub const MIN_POINTS: usize = 10;
/// Multi-start spacing in ω_z, as a fraction of the Fourier width 2π/t_d.
const START_SPACING: f64 = 0.25;
/// Grid path: alternations between per-row phasor fits and the resonance fit.
const GRID_PASSES: usize = 3;
/// Gauss-Legendre segments per histogram bin in the arrival model.
const SEGMENTS_PER_BIN: usize = 4;

pub enum ForceData<'a> {
    Grid(&'a ResidualGrid),
    Spectrum(&'a SpectrumResult),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSource {
    ResidualGrid,
    Spectrum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceFit {
    /// N
    pub force: f64,
    pub force_sigma: f64,
    /// rad/s
    pub omega_z: f64,
    pub omega_z_sigma: f64,
    /// Covariance of (force, omega_z) in SI units.
    pub covariance: [[f64; 2]; 2],
    /// ½ Σ r² at the optimum, in the units of the fitted phasors (m/s)².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts: usize,
    pub points: usize,
    pub source: FitSource,
}

/// Velocity phasors `z_k` with the model
/// `z_k = v(F, ω_z; ω_k) exp(i ((ω_z − ω_k) L_k + c0))`.
struct PhasorData {
    omega_d: Vec<f64>,
    lever: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
    c0: f64,
}

struct ResonanceProblem<'a> {
    data: &'a PhasorData,
    mode: ModeParams,
    drive: DriveConfig,
    force_scale: f64,
    omega_ref: f64,
}

impl ResonanceProblem<'_> {
    fn unscale(&self, p: &[f64]) -> (f64, f64) {
        (
            p[0] * self.force_scale,
            self.omega_ref + p[1] / self.drive.t_d,
        )
    }

    fn point(&self, k: usize, force: f64, omega_z: f64) -> (ModeParams, DriveConfig, f64) {
        let mode = ModeParams {
            omega_z,
            ..self.mode
        };
        let drive = DriveConfig {
            force,
            omega_d: self.data.omega_d[k],
            ..self.drive
        };
        let theta = (omega_z - self.data.omega_d[k]) * self.data.lever[k] + self.data.c0;
        (mode, drive, theta)
    }
}

impl LeastSquaresProblem for ResonanceProblem<'_> {
    fn residual_count(&self) -> usize {
        2 * self.data.omega_d.len()
    }

    fn param_count(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let (force, omega_z) = self.unscale(p);
        for k in 0..self.data.omega_d.len() {
            let (mode, drive, theta) = self.point(k, force, omega_z);
            let v = signed_velocity(&mode, &drive);
            let (s, c) = theta.sin_cos();
            out[2 * k] = v * c - self.data.re[k];
            out[2 * k + 1] = v * s - self.data.im[k];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let (force, omega_z) = self.unscale(p);
        for k in 0..self.data.omega_d.len() {
            let (mode, drive, theta) = self.point(k, force, omega_z);
            let v = signed_velocity(&mode, &drive);
            let (dv_df, dv_dw) = signed_velocity_gradient(&mode, &drive);
            let (s, c) = theta.sin_cos();
            let lever = self.data.lever[k];
            out[(2 * k, 0)] = dv_df * c * self.force_scale;
            out[(2 * k + 1, 0)] = dv_df * s * self.force_scale;
            out[(2 * k, 1)] = (dv_dw * c - v * lever * s) / self.drive.t_d;
            out[(2 * k + 1, 1)] = (dv_dw * s + v * lever * c) / self.drive.t_d;
        }
    }
}

/// Least-squares force at fixed ω_z (the model is linear in F).
fn linear_force(problem: &ResonanceProblem, omega_z: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..problem.data.omega_d.len() {
        let (mode, drive, theta) = problem.point(k, 1.0, omega_z);
        let b = signed_velocity(&mode, &drive);
        let (s, c) = theta.sin_cos();
        num += b * (c * problem.data.re[k] + s * problem.data.im[k]);
        den += b * b;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn fit_resonance(
    data: &PhasorData,
    mode: &ModeParams,
    drive: &DriveConfig,
    source: FitSource,
) -> Result<ForceFit> {
    let n = data.omega_d.len();
    let (lo, hi) = data
        .omega_d
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| {
            (a.min(w), b.max(w))
        });
    let omega_ref = mode.omega_z.clamp(lo, hi);
    let probe = ResonanceProblem {
        data,
        mode: *mode,
        drive: *drive,
        force_scale: 1.0,
        omega_ref,
    };
    let force_scale = {
        let f = linear_force(&probe, omega_ref).abs();
        if f > 0.0 {
            f
        } else {
            drive.force.max(f64::MIN_POSITIVE)
        }
    };
    let problem = ResonanceProblem {
        force_scale,
        ..probe
    };

    let step = START_SPACING * 2.0 * PI / drive.t_d;
    let count = ((hi - lo) / step).floor() as usize + 1;
    let lower = [0.0, (lo - omega_ref) * drive.t_d];
    let upper = [1e6, (hi - omega_ref) * drive.t_d];
    let config = LmConfig::default();

    let mut best: Option<crate::fit::LmReport> = None;
    for i in 0..count {
        let w = lo + step * i as f64;
        let f0 = (linear_force(&problem, w) / force_scale).max(1e-3);
        let report = levenberg_marquardt(
            &problem,
            &[f0, (w - omega_ref) * drive.t_d],
            &lower,
            &upper,
            &config,
        );
        if best.as_ref().is_none_or(|b| report.cost < b.cost) {
            best = Some(report);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::FitFailure {
            reason: format!(
                "no start converged within {} iterations",
                config.max_iterations
            ),
            best_residual: (2.0 * best.cost).sqrt(),
        });
    }
    let (force, omega_z) = problem.unscale(&best.params);
    let scale = [force_scale, 1.0 / drive.t_d];
    let mut covariance = [[f64::NAN; 2]; 2];
    if let Some(cov) = best.covariance(2 * n) {
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = cov[(i, j)] * scale[i] * scale[j];
            }
        }
    }
    Ok(ForceFit {
        force,
        force_sigma: covariance[0][0].sqrt(),
        omega_z,
        omega_z_sigma: covariance[1][1].sqrt(),
        covariance,
        cost: best.cost,
        iterations: best.iterations,
        converged: best.converged,
        starts: count,
        points: n,
        source,
    })
}

/// Probability that the first detected photon lands in each TAC bin, for a
/// velocity `c sin(ωτ) + d cos(ωτ)` in arrival time τ decaying as
/// `exp(−γ t)` from detection start `t = τ − gate_delay`.
#[derive(Clone, Debug)]
pub struct ArrivalModel {
    det: DetectionConfig,
    omega: f64,
    gate_delay: f64,
    /// Detection-frame bin edges.
    edges: Vec<f64>,
}

/// Bin probabilities and their derivatives with respect to `c` and `d`.
#[derive(Clone, Debug, Default)]
pub struct BinProbabilities {
    pub p: Vec<f64>,
    pub dp_dc: Vec<f64>,
    pub dp_dd: Vec<f64>,
}

impl ArrivalModel {
    pub fn new(det: &DetectionConfig, omega: f64, gate_delay: f64) -> Self {
        let edges = (0..=det.bin_count())
            .map(|j| (det.dead_time + j as f64 * det.bin_width - gate_delay).max(0.0))
            .collect();
        Self {
            det: *det,
            omega,
            gate_delay,
            edges,
        }
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn evaluate(&self, c: f64, d: f64) -> BinProbabilities {
        // Two-point Gauss-Legendre nodes on [-1, 1].
        const NODE: f64 = 0.577_350_269_189_625_8;
        let det = &self.det;
        let integrand = |t: f64| {
            let (s, co) = (self.omega * (t + self.gate_delay)).sin_cos();
            let decay = (-det.damping * t).exp();
            let v = (c * s + d * co) * decay;
            let slope = scatter_rate_slope(v, det) * decay;
            (scatter_rate(v, det), slope * s, slope * co)
        };
        let integrate = |a: f64, b: f64, segments: usize| {
            let mut acc = (0.0, 0.0, 0.0);
            if b <= a {
                return acc;
            }
            let h = (b - a) / segments as f64;
            for k in 0..segments {
                let mid = a + (k as f64 + 0.5) * h;
                for x in [mid - 0.5 * h * NODE, mid + 0.5 * h * NODE] {
                    let (r, rc, rd) = integrand(x);
                    acc.0 += 0.5 * h * r;
                    acc.1 += 0.5 * h * rc;
                    acc.2 += 0.5 * h * rd;
                }
            }
            acc
        };

        let lead = ((self.edges[0] / det.bin_width).ceil() as usize).max(1) * SEGMENTS_PER_BIN;
        let mut lam = integrate(0.0, self.edges[0], lead);
        let mut out = BinProbabilities {
            p: Vec::with_capacity(self.bins()),
            dp_dc: Vec::with_capacity(self.bins()),
            dp_dd: Vec::with_capacity(self.bins()),
        };
        for w in self.edges.windows(2) {
            let seg = integrate(w[0], w[1], SEGMENTS_PER_BIN);
            let next = (lam.0 + seg.0, lam.1 + seg.1, lam.2 + seg.2);
            let (s0, s1) = ((-lam.0).exp(), (-next.0).exp());
            out.p.push(s0 - s1);
            out.dp_dc.push(-s0 * lam.1 + s1 * next.1);
            out.dp_dd.push(-s0 * lam.2 + s1 * next.2);
            lam = next;
        }
        out
    }
}

struct RowProblem<'a> {
    model: ArrivalModel,
    counts: &'a [u64],
    reps: f64,
    weights: Vec<f64>,
    /// Velocity scale of the parameters, m/s.
    scale: f64,
}

impl LeastSquaresProblem for RowProblem<'_> {
    fn residual_count(&self) -> usize {
        self.counts.len()
    }

    fn param_count(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let probs = self.model.evaluate(p[0] * self.scale, p[1] * self.scale);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (self.reps * probs.p[j] - self.counts[j] as f64) * self.weights[j];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let probs = self.model.evaluate(p[0] * self.scale, p[1] * self.scale);
        for j in 0..self.counts.len() {
            let w = self.reps * self.weights[j] * self.scale;
            out[(j, 0)] = probs.dp_dc[j] * w;
            out[(j, 1)] = probs.dp_dd[j] * w;
        }
    }
}

/// Velocity phasor `(c, d)` of one residual-grid row, with
/// `v(τ) = c sin(ωτ) + d cos(ωτ)`. Counts are weighted by the drive-off
/// expectation so the weights do not depend on the data.
pub fn fit_row_phasor(
    det: &DetectionConfig,
    counts: &[u64],
    reps: u64,
    omega: f64,
    gate_delay: f64,
) -> Option<(f64, f64)> {
    let model = ArrivalModel::new(det, omega, gate_delay);
    if model.bins() != counts.len() {
        return None;
    }
    let reps_f = reps as f64;
    let null = model.evaluate(0.0, 0.0);
    let weights = null
        .p
        .iter()
        .map(|p| 1.0 / (reps_f * p).max(1.0).sqrt())
        .collect();
    // One rest-frame Doppler width of velocity, rescaled to order unity.
    let scale = det.linewidth / det.k_detect.abs().max(f64::MIN_POSITIVE) * 0.01;
    let problem = RowProblem {
        model,
        counts,
        reps: reps_f,
        weights,
        scale,
    };
    let bound = 100.0;
    let report = levenberg_marquardt(
        &problem,
        &[0.0, 0.0],
        &[-bound, -bound],
        &[bound, bound],
        &LmConfig::default(),
    );
    report
        .converged
        .then(|| (report.params[0] * scale, report.params[1] * scale))
}

fn grid_phasors(grid: &ResidualGrid, omega: f64) -> PhasorData {
    let t_d = grid.drive.t_d;
    let mut data = PhasorData {
        omega_d: Vec::new(),
        lever: Vec::new(),
        re: Vec::new(),
        im: Vec::new(),
        c0: grid.drive.psi,
    };
    for (k, &w) in grid.drive_frequencies.iter().enumerate() {
        if grid.flags[k].is_some() {
            continue;
        }
        let t_start = last_start_pulse(2.0 * PI / w, t_d);
        let gate_delay = t_d + grid.t_offset - t_start;
        if let Some((c, d)) = fit_row_phasor(
            &grid.detection,
            &grid.counts[k],
            grid.reps,
            omega,
            gate_delay,
        ) {
            data.omega_d.push(w);
            data.lever.push(t_start - 0.5 * t_d);
            data.re.push(c);
            data.im.push(d);
        }
    }
    data
}

fn spectrum_phasors(spectrum: &SpectrumResult) -> PhasorData {
    let lever = 0.5 * spectrum.t_d + spectrum.t_offset;
    let (re, im) = spectrum
        .rms_velocity
        .iter()
        .zip(&spectrum.phase_trace_t0)
        .map(|(r, ph)| {
            let amp = r * 2f64.sqrt();
            (amp * ph.cos(), -amp * ph.sin())
        })
        .unzip();
    PhasorData {
        omega_d: spectrum.freq_grid.clone(),
        lever: vec![lever; spectrum.len()],
        re,
        im,
        c0: 0.0,
    }
}

/// Fits `F_d` and `ω_z` of a single-mode resonance to a residual grid or a
/// noise-free spectrum. `mode` supplies the mass, weight and a starting
/// frequency; `drive` supplies `t_d` and `ψ`.
///
/// Spectra are assumed to come from one mode with an RMS window spanning many
/// oscillation periods, so `rms = |v| / √2`.
pub fn extract_force(data: ForceData, mode: &ModeParams, drive: &DriveConfig) -> Result<ForceFit> {
    mode.validate()?;
    drive.validate()?;
    match data {
        ForceData::Spectrum(s) => {
            if s.len() < MIN_POINTS {
                return Err(Error::invalid(
                    "spectrum",
                    format!("needs at least {MIN_POINTS} frequencies"),
                ));
            }
            let drive = DriveConfig {
                t_d: s.t_d,
                ..*drive
            };
            fit_resonance(&spectrum_phasors(s), mode, &drive, FitSource::Spectrum)
        }
        ForceData::Grid(g) => {
            if g.rows() < MIN_POINTS {
                return Err(Error::invalid(
                    "grid",
                    format!("needs at least {MIN_POINTS} drive frequencies"),
                ));
            }
            let drive = DriveConfig {
                t_d: g.drive.t_d,
                psi: g.drive.psi,
                ..*drive
            };
            let mut omega = mode.omega_z;
            let mut fit = None;
            for _ in 0..GRID_PASSES {
                let phasors = grid_phasors(g, omega);
                if phasors.omega_d.len() < MIN_POINTS {
                    return Err(Error::FitFailure {
                        reason: format!(
                            "only {} rows gave a velocity phasor, need {MIN_POINTS}",
                            phasors.omega_d.len()
                        ),
                        best_residual: f64::NAN,
                    });
                }
                let guess = ModeParams {
                    omega_z: omega,
                    ..*mode
                };
                let f = fit_resonance(&phasors, &guess, &drive, FitSource::ResidualGrid)?;
                omega = f.omega_z;
                fit = Some(f);
            }
            Ok(fit.expect("at least one pass"))
        }
    }
}
