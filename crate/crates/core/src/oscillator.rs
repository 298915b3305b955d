//! Classical driven harmonic oscillator: closed-form response after a drive
//! pulse, coherent multi-mode superposition and the Lamb-Dicke check.
//!
//! Time conventions: the drive runs over `[0, t_d]` in its own frame. For
//! detection-side quantities `t = 0` is the start of detection, which begins
//! `t_offset` after the drive ends, so the accumulated phase at detection
//! start is `ω_z (t_d + t_offset) + φ + ψ`.

use serde::{Deserialize, Serialize};

use crate::consts::HBAR;
use crate::error::{ensure_finite, Error, Result};

/// Fractional detuning beyond which the near-resonant closed forms are flagged.
pub const MAX_FRACTIONAL_DETUNING: f64 = 0.05;

/// One motional mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    /// Resonant angular frequency, rad/s.
    pub omega_z: f64,
    /// Effective mass, kg.
    pub mass: f64,
    /// Fraction of the drive force coupling into this mode.
    pub weight: f64,
}

impl ModeParams {
    pub fn new(omega_z: f64, mass: f64, weight: f64) -> Result<Self> {
        let mode = Self {
            omega_z,
            mass,
            weight,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("omega_z", self.omega_z)?;
        ensure_finite("mass", self.mass)?;
        ensure_finite("weight", self.weight)?;
        if self.omega_z <= 0.0 {
            return Err(Error::invalid("omega_z", "must be positive"));
        }
        if self.mass <= 0.0 {
            return Err(Error::invalid("mass", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::invalid("weight", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The drive pulse `F_d sin(ω_d t + ψ)` applied for `t_d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Force magnitude, N.
    pub force: f64,
    /// Drive angular frequency, rad/s.
    pub omega_d: f64,
    /// Drive phase, rad.
    pub psi: f64,
    /// Drive duration, s.
    pub t_d: f64,
}

impl DriveConfig {
    pub fn new(force: f64, omega_d: f64, psi: f64, t_d: f64) -> Result<Self> {
        let drive = Self {
            force,
            omega_d,
            psi,
            t_d,
        };
        drive.validate()?;
        Ok(drive)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("force", self.force)?;
        ensure_finite("omega_d", self.omega_d)?;
        ensure_finite("psi", self.psi)?;
        ensure_finite("t_d", self.t_d)?;
        if self.force < 0.0 {
            return Err(Error::invalid("force", "must be non-negative"));
        }
        if self.omega_d <= 0.0 {
            return Err(Error::invalid("omega_d", "must be positive"));
        }
        if self.t_d <= 0.0 {
            return Err(Error::invalid("t_d", "must be positive"));
        }
        Ok(())
    }

    /// Same pulse at another drive frequency.
    pub fn at_frequency(&self, omega_d: f64) -> Self {
        Self { omega_d, ..*self }
    }
}

/// Raised when `|ω_z − ω_d| / ω_z` exceeds [`MAX_FRACTIONAL_DETUNING`]; the
/// value is still returned but the near-resonant approximation is degrading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetuningWarning {
    pub fractional_detuning: f64,
}

/// A value together with an optional model-validity warning.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub warning: Option<DetuningWarning>,
}

impl<T> Flagged<T> {
    pub fn into_value(self) -> T {
        self.value
    }
}

/// Steady oscillation after the drive, `ż(t) = v sin(ω_z t + φ)` with `t`
/// measured from the start of the drive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VelocityResponse {
    /// |v|, m/s.
    pub amplitude: f64,
    /// φ = (ω_d − ω_z) t_d / 2, rad.
    pub phase: f64,
    /// −1 on the odd sidelobes, where the motion is in antiphase with the
    /// main lobe; +1 otherwise.
    pub sign: f64,
}

impl VelocityResponse {
    pub fn signed_amplitude(&self) -> f64 {
        self.sign * self.amplitude
    }
}

/// sin(x)/x with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// d/dx sinc(x).
pub fn sinc_derivative(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -x / 3.0 + x * x * x / 30.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

fn detuning_warning(mode: &ModeParams, drive: &DriveConfig) -> Option<DetuningWarning> {
    let frac = (mode.omega_z - drive.omega_d).abs() / mode.omega_z;
    (frac > MAX_FRACTIONAL_DETUNING).then_some(DetuningWarning {
        fractional_detuning: frac,
    })
}

fn check_inputs(mode: &ModeParams, drive: &DriveConfig) -> Result<Option<DetuningWarning>> {
    mode.validate()?;
    drive.validate()?;
    Ok(detuning_warning(mode, drive))
}

/// Signed velocity amplitude, written as
/// `w F ω_d t_d / (m (ω_z + ω_d)) · sinc((ω_z − ω_d) t_d / 2)` which equals
/// `w · 2 F ω_d / (m (ω_z² − ω_d²)) · sin((ω_z − ω_d) t_d / 2)` and stays
/// finite through resonance.
pub(crate) fn signed_velocity(mode: &ModeParams, drive: &DriveConfig) -> f64 {
    let x = 0.5 * (mode.omega_z - drive.omega_d) * drive.t_d;
    mode.weight * drive.force * drive.omega_d * drive.t_d
        / (mode.mass * (mode.omega_z + drive.omega_d))
        * sinc(x)
}

/// Partial derivatives of [`signed_velocity`] with respect to the force and
/// the mode frequency.
pub(crate) fn signed_velocity_gradient(mode: &ModeParams, drive: &DriveConfig) -> (f64, f64) {
    let x = 0.5 * (mode.omega_z - drive.omega_d) * drive.t_d;
    let sum = mode.omega_z + drive.omega_d;
    let pre = mode.weight * drive.omega_d * drive.t_d / (mode.mass * sum);
    let d_force = pre * sinc(x);
    let d_omega = drive.force * pre * (0.5 * drive.t_d * sinc_derivative(x) - sinc(x) / sum);
    (d_force, d_omega)
}

/// Velocity amplitude |v| of the free oscillation left behind by the drive.
pub fn velocity_amplitude(mode: &ModeParams, drive: &DriveConfig) -> Result<Flagged<f64>> {
    let warning = check_inputs(mode, drive)?;
    Ok(Flagged {
        value: signed_velocity(mode, drive).abs(),
        warning,
    })
}

/// Oscillation phase φ = (ω_d − ω_z) t_d / 2.
pub fn oscillation_phase(mode: &ModeParams, drive: &DriveConfig) -> Result<Flagged<f64>> {
    let warning = check_inputs(mode, drive)?;
    Ok(Flagged {
        value: 0.5 * (drive.omega_d - mode.omega_z) * drive.t_d,
        warning,
    })
}

pub fn velocity_response(
    mode: &ModeParams,
    drive: &DriveConfig,
) -> Result<Flagged<VelocityResponse>> {
    let warning = check_inputs(mode, drive)?;
    let v = signed_velocity(mode, drive);
    Ok(Flagged {
        value: VelocityResponse {
            amplitude: v.abs(),
            phase: 0.5 * (drive.omega_d - mode.omega_z) * drive.t_d,
            sign: if v < 0.0 { -1.0 } else { 1.0 },
        },
        warning,
    })
}

/// Near-resonant position during the drive, from rest at `t = 0`:
///
/// `z(t) ≈ w · 2F / (m(ω_z² − ω_d²)) · sin((ω_d − ω_z)t/2) · cos(ω_z t + (ω_d − ω_z)t/2 + ψ)`
pub fn trajectory(mode: &ModeParams, drive: &DriveConfig, t: f64) -> Result<Flagged<f64>> {
    let warning = check_inputs(mode, drive)?;
    ensure_finite("t", t)?;
    if t < 0.0 {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    if t > drive.t_d * (1.0 + 1e-12) {
        return Err(Error::invalid("t", "must not exceed the drive duration"));
    }
    let half = 0.5 * (drive.omega_d - mode.omega_z) * t;
    // 2F sin(h) / (m (ω_z² − ω_d²)) = −F t sinc(h) / (m (ω_z + ω_d))
    let envelope =
        -mode.weight * drive.force * t * sinc(half) / (mode.mass * (mode.omega_z + drive.omega_d));
    Ok(Flagged {
        value: envelope * (mode.omega_z * t + half + drive.psi).cos(),
        warning,
    })
}

/// One mode's contribution to the coherent velocity sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeTerm {
    /// Signed amplitude, m/s.
    pub velocity: f64,
    pub omega: f64,
    /// Phase of the term at detection start, rad.
    pub phase0: f64,
}

impl ModeTerm {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.velocity * (self.omega * t + self.phase0).sin()
    }
}

/// Precomputed coherent sum `Σ v_i sin(ω_i (t + t_offset + t_d) + φ_i + ψ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSum {
    terms: Vec<ModeTerm>,
    warnings: Vec<DetuningWarning>,
}

impl ModeSum {
    pub fn new(modes: &[ModeParams], drive: &DriveConfig, t_offset: f64) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("modes", "at least one mode is required"));
        }
        ensure_finite("t_offset", t_offset)?;
        if t_offset < 0.0 {
            return Err(Error::invalid("t_offset", "must be non-negative"));
        }
        let mut warnings = Vec::new();
        let mut terms = Vec::with_capacity(modes.len());
        for mode in modes {
            if let Some(w) = check_inputs(mode, drive)? {
                warnings.push(w);
            }
            let phi = 0.5 * (drive.omega_d - mode.omega_z) * drive.t_d;
            terms.push(ModeTerm {
                velocity: signed_velocity(mode, drive),
                omega: mode.omega_z,
                phase0: mode.omega_z * (drive.t_d + t_offset) + phi + drive.psi,
            });
        }
        Ok(Self { terms, warnings })
    }

    pub fn terms(&self) -> &[ModeTerm] {
        &self.terms
    }

    pub fn warnings(&self) -> &[DetuningWarning] {
        &self.warnings
    }

    #[inline]
    pub fn velocity_at(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.at(t)).sum()
    }
}

/// Coherent multi-mode velocity at time `t` after detection start.
pub fn multimode_velocity(
    modes: &[ModeParams],
    drive: &DriveConfig,
    t: f64,
    t_offset: f64,
) -> Result<f64> {
    ensure_finite("t", t)?;
    if t < 0.0 {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    Ok(ModeSum::new(modes, drive, t_offset)?.velocity_at(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambDickeInputs {
    /// kg
    pub mass: f64,
    /// rad/s
    pub omega_z: f64,
    /// Wavevector of one excitation beam, rad/m.
    pub k: f64,
    /// Half crossing angle, rad.
    pub theta: f64,
    pub nbar: f64,
}

/// η = sqrt(ħ / (2 m ω_z)) · 2k sin(θ) · sqrt(n̄ + 1)
pub fn lamb_dicke(inputs: &LambDickeInputs) -> Result<f64> {
    let LambDickeInputs {
        mass,
        omega_z,
        k,
        theta,
        nbar,
    } = *inputs;
    for (name, value) in [
        ("mass", mass),
        ("omega_z", omega_z),
        ("k", k),
        ("theta", theta),
        ("nbar", nbar),
    ] {
        ensure_finite(name, value)?;
    }
    if mass <= 0.0 {
        return Err(Error::invalid("mass", "must be positive"));
    }
    if omega_z <= 0.0 {
        return Err(Error::invalid("omega_z", "must be positive"));
    }
    if k <= 0.0 {
        return Err(Error::invalid("k", "must be positive"));
    }
    if theta < 0.0 {
        return Err(Error::invalid("theta", "must be non-negative"));
    }
    if nbar < 0.0 {
        return Err(Error::invalid("nbar", "must be non-negative"));
    }
    Ok((HBAR / (2.0 * mass * omega_z)).sqrt() * 2.0 * k * theta.sin() * (nbar + 1.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::{hz_to_angular, BE9_ION_MASS, BE9_WAVELENGTH};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn mode() -> ModeParams {
        ModeParams::new(hz_to_angular(867e3), 1.4965e-26, 1.0).unwrap()
    }

    fn drive(omega_d: f64) -> DriveConfig {
        DriveConfig::new(1e-22, omega_d, 0.0, 1e-3).unwrap()
    }

    #[test]
    fn resonance_uses_the_analytic_limit() {
        let m = ModeParams {
            weight: 0.5,
            ..mode()
        };
        let d = drive(m.omega_z);
        let v = velocity_amplitude(&m, &d).unwrap().value;
        assert_relative_eq!(
            v,
            0.5 * 1e-22 * 1e-3 / (2.0 * 1.4965e-26),
            max_relative = 1e-15
        );
    }

    #[test]
    fn first_null_is_zero() {
        let m = mode();
        for sign in [-1.0, 1.0] {
            let d = drive(m.omega_z + sign * 2.0 * PI / 1e-3);
            let v = velocity_amplitude(&m, &d).unwrap().value;
            let peak = velocity_amplitude(&m, &drive(m.omega_z)).unwrap().value;
            assert!(v / peak < 1e-12, "{v}");
        }
    }

    #[test]
    fn phase_values() {
        let m = mode();
        assert_eq!(oscillation_phase(&m, &drive(m.omega_z)).unwrap().value, 0.0);
        let p = oscillation_phase(&m, &drive(m.omega_z + 2.0 * PI / 1e-3))
            .unwrap()
            .value;
        assert_relative_eq!(p, PI, max_relative = 1e-9);
    }

    #[test]
    fn phase_slope_matches_finite_difference() {
        let m = mode();
        let h = 2.0 * PI * 10.0;
        for offset_hz in [-3000.0, -250.0, 0.0, 700.0, 4100.0] {
            let w = m.omega_z + 2.0 * PI * offset_hz;
            let up = oscillation_phase(&m, &drive(w + h)).unwrap().value;
            let down = oscillation_phase(&m, &drive(w - h)).unwrap().value;
            assert_relative_eq!((up - down) / (2.0 * h), 0.5e-3, max_relative = 1e-7);
        }
    }

    #[test]
    fn far_detuning_is_flagged_not_refused() {
        let m = mode();
        let r = velocity_amplitude(&m, &drive(0.9 * m.omega_z)).unwrap();
        assert!(r.warning.is_some());
        assert!(r.value.is_finite());
        assert!(velocity_amplitude(&m, &drive(1.01 * m.omega_z))
            .unwrap()
            .warning
            .is_none());
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let m = ModeParams {
            omega_z: f64::NAN,
            ..mode()
        };
        assert!(matches!(
            velocity_amplitude(&m, &drive(1.0)),
            Err(Error::InvalidParameter {
                name: "omega_z",
                ..
            })
        ));
        let d = DriveConfig {
            force: f64::INFINITY,
            ..drive(1.0)
        };
        assert!(velocity_amplitude(&mode(), &d).is_err());
    }

    #[test]
    fn trajectory_starts_at_rest() {
        let m = mode();
        let d = drive(m.omega_z + 2.0 * PI * 300.0);
        assert_eq!(trajectory(&m, &d, 0.0).unwrap().value, 0.0);
        // Envelope scale at the end of the pulse.
        let scale = 1e-22 * 1e-3 / (2.0 * 1.4965e-26 * m.omega_z);
        let h = 1e-10;
        let slope = (trajectory(&m, &d, h).unwrap().value - 0.0) / h;
        assert!((slope * h).abs() / scale < 1e-6);
        assert!(trajectory(&m, &d, -1e-9).is_err());
    }

    #[test]
    fn single_mode_sum_reduces_to_steady_oscillation() {
        let m = mode();
        let d = drive(m.omega_z + 2.0 * PI * 400.0);
        let r = velocity_response(&m, &d).unwrap().value;
        for t in [0.0, 1.3e-6, 7.7e-6] {
            let expected = r.signed_amplitude() * (m.omega_z * (t + d.t_d) + r.phase).sin();
            let got = multimode_velocity(&[m], &d, t, 0.0).unwrap();
            assert_relative_eq!(got, expected, epsilon = 1e-12 * r.amplitude);
        }
        assert!(multimode_velocity(&[], &d, 0.0, 0.0).is_err());
    }

    #[test]
    fn lamb_dicke_for_beryllium_at_867_khz() {
        let eta = lamb_dicke(&LambDickeInputs {
            mass: BE9_ION_MASS,
            omega_z: hz_to_angular(867e3),
            k: 2.0 * PI / BE9_WAVELENGTH,
            theta: 0.75_f64.to_radians(),
            nbar: 23.0,
        })
        .unwrap();
        assert!((eta - 0.07).abs() <= 0.007, "eta = {eta}");
    }

    #[test]
    fn lamb_dicke_zero_projection_and_scaling() {
        let base = LambDickeInputs {
            mass: BE9_ION_MASS,
            omega_z: hz_to_angular(867e3),
            k: 2.0 * PI / BE9_WAVELENGTH,
            theta: 0.0,
            nbar: 0.0,
        };
        assert_eq!(lamb_dicke(&base).unwrap(), 0.0);
        let tilted = LambDickeInputs {
            theta: 0.01,
            ..base
        };
        let doubled = LambDickeInputs {
            omega_z: 2.0 * tilted.omega_z,
            ..tilted
        };
        assert_relative_eq!(
            lamb_dicke(&doubled).unwrap(),
            lamb_dicke(&tilted).unwrap() / 2f64.sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn velocity_gradient_matches_finite_differences() {
        let m = mode();
        let d = drive(m.omega_z + 2.0 * PI * 650.0);
        let (df, dw) = signed_velocity_gradient(&m, &d);
        let hf = 1e-26;
        let fd_f = (signed_velocity(
            &m,
            &DriveConfig {
                force: d.force + hf,
                ..d
            },
        ) - signed_velocity(
            &m,
            &DriveConfig {
                force: d.force - hf,
                ..d
            },
        )) / (2.0 * hf);
        assert_relative_eq!(df, fd_f, max_relative = 1e-6);
        let hw = 2.0 * PI * 0.5;
        let fd_w = (signed_velocity(
            &ModeParams {
                omega_z: m.omega_z + hw,
                ..m
            },
            &d,
        ) - signed_velocity(
            &ModeParams {
                omega_z: m.omega_z - hw,
                ..m
            },
            &d,
        )) / (2.0 * hw);
        assert_relative_eq!(dw, fd_w, max_relative = 1e-5);
    }
}
