//! Physical constants (CODATA 2018) and the ⁹Be⁺ parameters used throughout.

use std::f64::consts::PI;

pub const HBAR: f64 = 1.054_571_817e-34;

/// Unified atomic mass unit in kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// ⁹Be⁺ mass in amu (neutral mass minus one electron).
pub const BE9_ION_MASS_AMU: f64 = 9.012_182_2 - 5.485_799e-4;

pub const BE9_ION_MASS: f64 = BE9_ION_MASS_AMU * AMU;

/// Natural linewidth (FWHM) of the 2P3/2 level in Hz.
pub const BE9_LINEWIDTH_HZ: f64 = 19.4e6;

/// Cooling/detection wavelength in m.
pub const BE9_WAVELENGTH: f64 = 313.0e-9;

pub const YOCTONEWTON: f64 = 1e-24;

#[inline]
pub fn hz_to_angular(f: f64) -> f64 {
    2.0 * PI * f
}

#[inline]
pub fn angular_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}
