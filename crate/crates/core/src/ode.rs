//! Direct fourth-order Runge-Kutta integration of
//! `m (z̈ + ω_z² z) = w F_d sin(ω_d t + ψ)` from rest, used as an independent
//! check on the closed forms in [`crate::oscillator`].

use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};
use crate::oscillator::{DriveConfig, ModeParams};

/// Target relative error of the automatically chosen internal step.
const AUTO_TOLERANCE: f64 = 2e-9;

/// Positions and velocities sampled every `dt` from `t = 0` up to `t_end`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTrajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl SampledTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn peak_position(&self) -> f64 {
        self.positions.iter().fold(0.0, |acc, z| acc.max(z.abs()))
    }

    /// Free-oscillation velocity amplitude `sqrt(ż² + ω² z²)` at sample `i`.
    pub fn velocity_amplitude_at(&self, i: usize, omega_z: f64) -> f64 {
        self.velocities[i].hypot(omega_z * self.positions[i])
    }
}

/// Largest accepted sampling interval, `2π / (50 max(ω_z, ω_d))`.
pub fn max_step(mode: &ModeParams, drive: &DriveConfig) -> f64 {
    2.0 * PI / (50.0 * mode.omega_z.max(drive.omega_d))
}

/// Internal RK4 substeps per sample so that the accumulated phase error over
/// `t_end` stays near [`AUTO_TOLERANCE`]. RK4 on an oscillator drifts in phase
/// by roughly `(ω h)^5 / 120` per step.
pub fn auto_substeps(mode: &ModeParams, drive: &DriveConfig, t_end: f64, dt: f64) -> usize {
    let omega = mode.omega_z.max(drive.omega_d);
    let cycles = (omega * t_end).max(1.0);
    let wh = (120.0 * AUTO_TOLERANCE / cycles).powf(0.25).min(0.1);
    ((omega * dt / wh).ceil() as usize).max(1)
}

pub fn ode_oracle(
    mode: &ModeParams,
    drive: &DriveConfig,
    t_end: f64,
    dt: f64,
) -> Result<SampledTrajectory> {
    let substeps = auto_substeps(mode, drive, t_end.max(0.0), dt.max(0.0));
    ode_oracle_with_substeps(mode, drive, t_end, dt, substeps)
}

pub fn ode_oracle_with_substeps(
    mode: &ModeParams,
    drive: &DriveConfig,
    t_end: f64,
    dt: f64,
    substeps: usize,
) -> Result<SampledTrajectory> {
    mode.validate()?;
    drive.validate()?;
    ensure_finite("t_end", t_end)?;
    ensure_finite("dt", dt)?;
    if t_end < 0.0 {
        return Err(Error::invalid("t_end", "must be non-negative"));
    }
    if dt <= 0.0 {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let max = max_step(mode, drive);
    if dt > max {
        return Err(Error::StepSize { dt, max });
    }
    if substeps == 0 {
        return Err(Error::invalid("substeps", "must be at least 1"));
    }

    // Never sample past t_end; tolerate t_end being a multiple of dt up to rounding.
    let samples = (t_end / dt * (1.0 + 1e-12)).floor() as usize;
    let accel = mode.weight * drive.force / mode.mass;
    let w2 = mode.omega_z * mode.omega_z;
    let h = dt / substeps as f64;
    let (rot_s, rot_c) = (0.5 * drive.omega_d * h).sin_cos();

    let mut out = SampledTrajectory {
        times: Vec::with_capacity(samples + 1),
        positions: Vec::with_capacity(samples + 1),
        velocities: Vec::with_capacity(samples + 1),
    };
    let (mut z, mut v) = (0.0_f64, 0.0_f64);
    out.times.push(0.0);
    out.positions.push(z);
    out.velocities.push(v);

    for n in 0..samples {
        // Exact forcing phase at each sample; rotate within the substeps.
        let (mut s, mut c) = (drive.omega_d * n as f64 * dt + drive.psi).sin_cos();
        for _ in 0..substeps {
            let f0 = accel * s;
            let (sm, cm) = (s * rot_c + c * rot_s, c * rot_c - s * rot_s);
            let fm = accel * sm;
            let (s1, c1) = (sm * rot_c + cm * rot_s, cm * rot_c - sm * rot_s);
            let f1 = accel * s1;

            let k1z = v;
            let k1v = f0 - w2 * z;
            let k2z = v + 0.5 * h * k1v;
            let k2v = fm - w2 * (z + 0.5 * h * k1z);
            let k3z = v + 0.5 * h * k2v;
            let k3v = fm - w2 * (z + 0.5 * h * k2z);
            let k4z = v + h * k3v;
            let k4v = f1 - w2 * (z + h * k3z);
            z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            s = s1;
            c = c1;
        }
        out.times.push((n + 1) as f64 * dt);
        out.positions.push(z);
        out.velocities.push(v);
    }
    Ok(out)
}
