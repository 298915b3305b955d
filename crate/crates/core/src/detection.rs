//! Doppler-modulated fluorescence and the drive-synchronized first-photon
//! measurement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineshape {
    /// Low-saturation Lorentzian profile.
    #[default]
    Lorentzian,
    /// First-order expansion about zero velocity, clamped to `[0, R0]`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Detected scatter rate at line center, photons/s.
    pub base_rate: f64,
    /// Laser minus atomic angular frequency, rad/s (negative is red).
    pub detuning: f64,
    /// Atomic FWHM, rad/s.
    pub linewidth: f64,
    /// Detection wavevector projected on the motion axis, rad/m. Positive
    /// velocity is motion toward the detection laser.
    pub k_detect: f64,
    /// Velocity-amplitude decay rate during detection, 1/s.
    pub damping: f64,
    /// Arrival times below this are discarded, s.
    pub dead_time: f64,
    /// Detection window, s.
    pub window: f64,
    /// Histogram bin width, s.
    pub bin_width: f64,
    #[serde(default)]
    pub lineshape: Lineshape,
    /// RMS random phase of the start-pulse train per repetition, rad.
    #[serde(default)]
    pub phase_jitter: f64,
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("base_rate", self.base_rate),
            ("detuning", self.detuning),
            ("linewidth", self.linewidth),
            ("k_detect", self.k_detect),
            ("damping", self.damping),
            ("dead_time", self.dead_time),
            ("window", self.window),
            ("bin_width", self.bin_width),
            ("phase_jitter", self.phase_jitter),
        ] {
            ensure_finite(name, value)?;
        }
        if self.base_rate <= 0.0 {
            return Err(Error::invalid("base_rate", "must be positive"));
        }
        if self.linewidth <= 0.0 {
            return Err(Error::invalid("linewidth", "must be positive"));
        }
        if self.damping < 0.0 {
            return Err(Error::invalid("damping", "must be non-negative"));
        }
        if self.dead_time < 0.0 {
            return Err(Error::invalid("dead_time", "must be non-negative"));
        }
        if self.window <= 0.0 {
            return Err(Error::invalid("window", "must be positive"));
        }
        if self.bin_width <= 0.0 || self.bin_width >= self.window {
            return Err(Error::invalid("bin_width", "must lie in (0, window)"));
        }
        if self.dead_time + self.bin_width > self.window {
            return Err(Error::invalid(
                "dead_time",
                "leaves no complete bin inside the window",
            ));
        }
        if self.phase_jitter < 0.0 {
            return Err(Error::invalid("phase_jitter", "must be non-negative"));
        }
        Ok(())
    }

    fn half_width(&self) -> f64 {
        0.5 * self.linewidth
    }

    /// Rate at rest, R(0).
    pub fn rest_rate(&self) -> f64 {
        let g = self.half_width();
        self.base_rate * g * g / (self.detuning * self.detuning + g * g)
    }

    /// d ln R / d(k v) at zero velocity.
    pub fn log_slope(&self) -> f64 {
        let g = self.half_width();
        -2.0 * self.detuning / (self.detuning * self.detuning + g * g)
    }

    /// Number of complete histogram bins between the dead time and the end of
    /// the window.
    pub fn bin_count(&self) -> usize {
        ((self.window - self.dead_time) / self.bin_width + 1e-9).floor() as usize
    }

    /// Centers of the left-closed histogram bins starting at the dead time.
    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.bin_count())
            .map(|j| self.dead_time + (j as f64 + 0.5) * self.bin_width)
            .collect()
    }

    /// Bin index of an accepted arrival time, or `None` when it falls in the
    /// dead time or past the last complete bin.
    pub fn bin_of(&self, arrival: f64) -> Option<usize> {
        if arrival < self.dead_time {
            return None;
        }
        let j = ((arrival - self.dead_time) / self.bin_width).floor() as usize;
        (j < self.bin_count()).then_some(j)
    }
}

/// Detected photon rate for an ion moving at `velocity`:
/// `R0 (Γ/2)² / ((δ + k v)² + (Γ/2)²)`.
///
/// For a red-detuned laser, motion toward the beam (`k v > 0`) brings the ion
/// closer to resonance and raises the rate.
#[inline]
pub fn scatter_rate(velocity: f64, det: &DetectionConfig) -> f64 {
    match det.lineshape {
        Lineshape::Lorentzian => {
            let g = det.half_width();
            let x = det.detuning + det.k_detect * velocity;
            det.base_rate * g * g / (x * x + g * g)
        }
        Lineshape::Linear => {
            let r = det.rest_rate() * (1.0 + det.log_slope() * det.k_detect * velocity);
            r.clamp(0.0, det.base_rate)
        }
    }
}

/// d(scatter rate)/d(velocity).
#[inline]
pub fn scatter_rate_slope(velocity: f64, det: &DetectionConfig) -> f64 {
    match det.lineshape {
        Lineshape::Lorentzian => {
            let g = det.half_width();
            let x = det.detuning + det.k_detect * velocity;
            let denom = x * x + g * g;
            -2.0 * det.base_rate * g * g * x * det.k_detect / (denom * denom)
        }
        Lineshape::Linear => {
            let r = det.rest_rate() * (1.0 + det.log_slope() * det.k_detect * velocity);
            if r <= 0.0 || r >= det.base_rate {
                0.0
            } else {
                det.rest_rate() * det.log_slope() * det.k_detect
            }
        }
    }
}

/// One accepted stop event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    /// Stop minus accepted start, s.
    pub arrival_time: f64,
    pub repetition_index: u64,
}

/// First event of the inhomogeneous Poisson process with rate
/// `scatter_rate(velocity(t) e^{-γ t})` on `[0, window]`, by thinning against
/// the bound `R0`. Returns `None` when no photon arrives in the window.
pub fn sample_first_photon<F, R>(velocity: F, det: &DetectionConfig, rng: &mut R) -> Option<f64>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    let bound = det.base_rate;
    let exp = Exp::new(bound).expect("base rate is validated positive");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > det.window {
            return None;
        }
        let v = velocity(t) * (-det.damping * t).exp();
        let u: f64 = rng.random();
        if u * bound < scatter_rate(v, det) {
            return Some(t);
        }
    }
}

/// [`sample_first_photon`] with a fresh generator from `seed`.
pub fn sample_first_photon_seeded<F>(velocity: F, det: &DetectionConfig, seed: u64) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_first_photon(velocity, det, &mut rng)
}

/// Time of the last start pulse at or before `drive_end`; pulses fire at
/// integer multiples of `beat_period`.
pub fn last_start_pulse(beat_period: f64, drive_end: f64) -> f64 {
    let mut n = (drive_end / beat_period).floor();
    if (n + 1.0) * beat_period <= drive_end {
        n += 1.0;
    } else if n * beat_period > drive_end {
        n -= 1.0;
    }
    n * beat_period
}

/// TAC reading: photon time minus the last start pulse before the drive ended.
pub fn tac_gate(beat_period: f64, drive_end: f64, photon_time: f64) -> Result<f64> {
    ensure_finite("beat_period", beat_period)?;
    ensure_finite("drive_end", drive_end)?;
    ensure_finite("photon_time", photon_time)?;
    if beat_period <= 0.0 {
        return Err(Error::invalid("beat_period", "must be positive"));
    }
    if photon_time <= drive_end {
        return Err(Error::invalid(
            "photon_time",
            "must come after the end of the drive",
        ));
    }
    Ok(photon_time - last_start_pulse(beat_period, drive_end))
}
