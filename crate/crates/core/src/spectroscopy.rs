//! Phase-sensitive analysis: coherent RMS-velocity and incoherent energy
//! spectra, drive-referenced phase traces, offset interference and
//! resolvability of nearly degenerate mode pairs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::oscillator::{signed_velocity, sinc, DriveConfig, ModeParams};
use crate::peaks::{find_peaks, Peak};

pub const RMS_CONVENTION: &str = "rms_velocity = sqrt((1/T_det) * integral_0^T_det [sum_i v_i sin(w_i (t + t_offset + t_d) + phi_i + psi)]^2 dt), difference-frequency terms only (sum-frequency terms at w_i + w_j dropped)";
pub const ENERGY_CONVENTION: &str =
    "absorbed_energy = sum_i m_i v_i^2 / 2 in joules per excitation; phase discarded, no cross terms";
pub const PHASE_CONVENTION: &str = "phase_t0 = drive phase minus velocity phase at detection start, -arg(sum_i v_i exp(i (w_i - w_d)(t_d/2 + t_offset))), unwrapped along the grid; equals (w_d - w_z) t_d / 2 for one mode at zero offset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Drive angular frequencies, rad/s.
    pub freq_grid: Vec<f64>,
    /// m/s
    pub rms_velocity: Vec<f64>,
    /// J
    pub absorbed_energy: Vec<f64>,
    /// rad
    pub phase_trace_t0: Vec<f64>,
    /// Detection window used for the RMS average, s.
    pub t_det: f64,
    pub t_offset: f64,
    pub t_d: f64,
}

impl SpectrumResult {
    pub fn len(&self) -> usize {
        self.freq_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_grid.is_empty()
    }
}

fn check_grid(freq_grid: &[f64]) -> Result<()> {
    if freq_grid.is_empty() {
        return Err(Error::invalid("freq_grid", "must not be empty"));
    }
    for &w in freq_grid {
        ensure_finite("freq_grid", w)?;
        if w <= 0.0 {
            return Err(Error::invalid("freq_grid", "frequencies must be positive"));
        }
    }
    Ok(())
}

fn check_modes(modes: &[ModeParams], drive: &DriveConfig) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::invalid("modes", "at least one mode is required"));
    }
    for m in modes {
        m.validate()?;
    }
    drive.validate()
}

/// Time average of `cos(Ω t + β)` over `[0, T]`.
fn mean_cos(omega: f64, beta: f64, window: f64) -> f64 {
    let half = 0.5 * omega * window;
    (beta + half).cos() * sinc(half)
}

/// Wraps into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Continuous phase along a sequence: each step is taken as its wrapped value.
pub fn unwrap_phase(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut acc = match raw.first() {
        Some(&x) => x,
        None => return out,
    };
    out.push(acc);
    for w in raw.windows(2) {
        acc += wrap_phase(w[1] - w[0]);
        out.push(acc);
    }
    out
}

/// Per-drive-frequency quantities shared by the spectra.
struct Point {
    rms: f64,
    energy: f64,
    /// Drive phase minus velocity phase, wrapped.
    lag: f64,
}

fn evaluate(modes: &[ModeParams], drive: &DriveConfig, t_det: f64, t_offset: f64) -> Point {
    let lever = 0.5 * drive.t_d + t_offset;
    let amps: Vec<f64> = modes.iter().map(|m| signed_velocity(m, drive)).collect();

    let mut ms = 0.0;
    let mut energy = 0.0;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, (mi, vi)) in modes.iter().zip(&amps).enumerate() {
        ms += 0.5 * vi * vi;
        energy += 0.5 * mi.mass * vi * vi;
        let rel = (mi.omega_z - drive.omega_d) * lever;
        re += vi * rel.cos();
        im += vi * rel.sin();
        for (mj, vj) in modes.iter().zip(&amps).skip(i + 1) {
            let omega = mi.omega_z - mj.omega_z;
            let beta = omega * lever;
            ms += vi * vj * mean_cos(omega, beta, t_det);
        }
    }
    Point {
        rms: ms.max(0.0).sqrt(),
        energy,
        lag: -im.atan2(re),
    }
}

/// Coherent RMS velocity, incoherent energy and the t = 0 phase trace over
/// `freq_grid`.
pub fn rms_spectrum(
    modes: &[ModeParams],
    drive: &DriveConfig,
    freq_grid: &[f64],
    t_det: f64,
    t_offset: f64,
) -> Result<SpectrumResult> {
    check_modes(modes, drive)?;
    check_grid(freq_grid)?;
    ensure_finite("t_det", t_det)?;
    ensure_finite("t_offset", t_offset)?;
    if t_det <= 0.0 {
        return Err(Error::invalid("t_det", "must be positive"));
    }
    if t_offset < 0.0 {
        return Err(Error::invalid("t_offset", "must be non-negative"));
    }
    let points: Vec<Point> = freq_grid
        .iter()
        .map(|&w| evaluate(modes, &drive.at_frequency(w), t_det, t_offset))
        .collect();
    let lags: Vec<f64> = points.iter().map(|p| p.lag).collect();
    Ok(SpectrumResult {
        freq_grid: freq_grid.to_vec(),
        rms_velocity: points.iter().map(|p| p.rms).collect(),
        absorbed_energy: points.iter().map(|p| p.energy).collect(),
        phase_trace_t0: unwrap_phase(&lags),
        t_det,
        t_offset,
        t_d: drive.t_d,
    })
}

/// Energy absorbed from an incoherent measurement, `Σ m_i v_i² / 2`.
pub fn energy_spectrum(
    modes: &[ModeParams],
    drive: &DriveConfig,
    freq_grid: &[f64],
) -> Result<Vec<f64>> {
    check_modes(modes, drive)?;
    check_grid(freq_grid)?;
    Ok(freq_grid
        .iter()
        .map(|&w| {
            let d = drive.at_frequency(w);
            modes
                .iter()
                .map(|m| {
                    let v = signed_velocity(m, &d);
                    0.5 * m.mass * v * v
                })
                .sum()
        })
        .collect())
}

/// [`rms_spectrum`] for each drive-to-detection delay.
pub fn offset_scan(
    modes: &[ModeParams],
    drive: &DriveConfig,
    offsets: &[f64],
    freq_grid: &[f64],
    t_det: f64,
) -> Result<Vec<SpectrumResult>> {
    if offsets.is_empty() {
        return Err(Error::invalid("offsets", "must not be empty"));
    }
    offsets
        .iter()
        .map(|&off| rms_spectrum(modes, drive, freq_grid, t_det, off))
        .collect()
}

/// Sidelobe nulls `ω_z ± 2πn/t_d`, `n = 1..=n_max`, in ascending order.
pub fn sidelobe_nulls(mode: &ModeParams, drive: &DriveConfig, n_max: usize) -> Result<Vec<f64>> {
    mode.validate()?;
    drive.validate()?;
    if n_max == 0 {
        return Err(Error::invalid("n_max", "must be at least 1"));
    }
    let step = 2.0 * PI / drive.t_d;
    let mut nulls: Vec<f64> = (1..=n_max)
        .flat_map(|n| {
            let d = n as f64 * step;
            [mode.omega_z - d, mode.omega_z + d]
        })
        .collect();
    nulls.sort_by(f64::total_cmp);
    Ok(nulls)
}

/// Exact full width at half maximum of |v(ω_d)| for one mode, rad/s.
pub fn resonance_fwhm(mode: &ModeParams, drive: &DriveConfig) -> Result<f64> {
    mode.validate()?;
    drive.validate()?;
    let amp = |w: f64| signed_velocity(mode, &drive.at_frequency(w)).abs();
    let lobe = 2.0 * PI / drive.t_d;

    // Golden-section search for the peak inside the main lobe.
    let (mut a, mut b) = (mode.omega_z - 0.5 * lobe, mode.omega_z + 0.5 * lobe);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if amp(c) > amp(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let peak_w = 0.5 * (a + b);
    let half = 0.5 * amp(peak_w);

    let crossing = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if amp(mid) > half {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    let lo = crossing(peak_w, mode.omega_z - lobe);
    let hi = crossing(peak_w, mode.omega_z + lobe);
    Ok(hi - lo)
}

/// Least-squares slope of `phase_trace_t0` against drive frequency over the
/// grid points whose RMS response exceeds `min_fraction` of the maximum.
pub fn phase_slope(spectrum: &SpectrumResult, min_fraction: f64) -> Option<f64> {
    let max = spectrum.rms_velocity.iter().cloned().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = spectrum
        .freq_grid
        .iter()
        .zip(&spectrum.phase_trace_t0)
        .zip(&spectrum.rms_velocity)
        .filter(|(_, &r)| r > min_fraction * max)
        .map(|((&w, &p), _)| (w, p))
        .collect();
    linear_slope(&pts)
}

pub(crate) fn linear_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Settings for [`resolvability`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolvabilityCriterion {
    /// Minimum peak prominence as a fraction of the spectrum maximum.
    pub min_prominence: f64,
    /// Peaks lower than this fraction of the maximum (sidelobes) are ignored.
    pub min_peak_height: f64,
    /// Phase steps are ignored where the coherent response is below this
    /// fraction of its maximum (sidelobe nulls).
    pub null_fraction: f64,
    /// Phase slopes smaller than this fraction of the median |slope| carry no sign.
    pub min_slope_fraction: f64,
    /// Phase-trace direction changes needed to call the trace a zig-zag.
    pub min_reversals: usize,
}

impl Default for ResolvabilityCriterion {
    fn default() -> Self {
        Self {
            min_prominence: 0.01,
            min_peak_height: 0.5,
            null_fraction: 0.02,
            min_slope_fraction: 0.1,
            min_reversals: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvabilityReport {
    /// Δ, rad/s.
    pub mode_spacing: f64,
    /// Resonance peaks in the incoherent energy spectrum.
    pub peak_count: usize,
    /// Resonance peaks in the coherent RMS spectrum.
    pub peak_count_coherent: usize,
    pub trough_depth_coherent: f64,
    pub trough_depth_incoherent: f64,
    /// Direction changes of the t = 0 phase trace away from sidelobe nulls.
    pub phase_reversals: usize,
    pub distinguishable: bool,
    pub criterion: String,
}

/// Peaks of a spectrum that pass the criterion's prominence and height cuts.
pub fn resonance_peaks(values: &[f64], c: &ResolvabilityCriterion) -> Vec<Peak> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    find_peaks(values, c.min_prominence * max)
        .into_iter()
        .filter(|p| p.value >= c.min_peak_height * max)
        .collect()
}

/// `1 − min_between / mean(peaks)` for the two tallest peaks, else 0.
pub fn trough_depth(values: &[f64], peaks: &[Peak]) -> f64 {
    if peaks.len() < 2 {
        return 0.0;
    }
    let mut top: Vec<Peak> = peaks.to_vec();
    top.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.index.cmp(&b.index)));
    let (l, r) = {
        let (a, b) = (top[0].index, top[1].index);
        (a.min(b), a.max(b))
    };
    let floor = values[l..=r].iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = 0.5 * (top[0].value + top[1].value);
    if mean <= 0.0 {
        return 0.0;
    }
    (1.0 - floor / mean).clamp(0.0, 1.0)
}

/// Counts direction changes of a phase trace, skipping steps through
/// sidelobe nulls (low amplitude or a jump of more than π/2) and steps too
/// shallow to carry a reliable sign.
pub fn phase_reversals(
    freq_grid: &[f64],
    phase: &[f64],
    amplitude: &[f64],
    c: &ResolvabilityCriterion,
) -> usize {
    let max = amplitude.iter().cloned().fold(0.0, f64::max);
    let floor = c.null_fraction * max;
    let slopes: Vec<f64> = (0..freq_grid.len().saturating_sub(1))
        .filter_map(|k| {
            let step = wrap_phase(phase[k + 1] - phase[k]);
            let dw = freq_grid[k + 1] - freq_grid[k];
            let clear = amplitude[k] > floor && amplitude[k + 1] > floor;
            (clear && step.abs() <= 0.5 * PI && dw != 0.0).then(|| step / dw)
        })
        .collect();
    if slopes.is_empty() {
        return 0;
    }
    let mut mags: Vec<f64> = slopes.iter().map(|s| s.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let threshold = c.min_slope_fraction * mags[mags.len() / 2];
    let signs: Vec<bool> = slopes
        .iter()
        .filter(|s| s.abs() >= threshold && **s != 0.0)
        .map(|s| *s > 0.0)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Can a pair of modes be told apart from one mode over this scan?
pub fn resolvability(
    modes: &[ModeParams],
    drive: &DriveConfig,
    freq_grid: &[f64],
    t_det: f64,
    t_offset: f64,
    criterion: &ResolvabilityCriterion,
) -> Result<ResolvabilityReport> {
    if modes.len() != 2 {
        return Err(Error::invalid(
            "modes",
            "resolvability needs exactly two modes",
        ));
    }
    let spectrum = rms_spectrum(modes, drive, freq_grid, t_det, t_offset)?;
    let coherent_peaks = resonance_peaks(&spectrum.rms_velocity, criterion);
    let energy_peaks = resonance_peaks(&spectrum.absorbed_energy, criterion);
    let reversals = phase_reversals(
        freq_grid,
        &spectrum.phase_trace_t0,
        &spectrum.rms_velocity,
        criterion,
    );
    let peak_count = energy_peaks.len().max(1);
    let peak_count_coherent = coherent_peaks.len().max(1);
    Ok(ResolvabilityReport {
        mode_spacing: (modes[1].omega_z - modes[0].omega_z).abs(),
        peak_count,
        peak_count_coherent,
        trough_depth_coherent: trough_depth(&spectrum.rms_velocity, &coherent_peaks),
        trough_depth_incoherent: trough_depth(&spectrum.absorbed_energy, &energy_peaks),
        phase_reversals: reversals,
        distinguishable: peak_count >= 2
            || peak_count_coherent >= 2
            || reversals >= criterion.min_reversals,
        criterion: format!(
            "distinguishable if either spectrum has two resonance peaks (prominence >= {} and height >= {} of max) or the phase trace reverses direction >= {} times away from nulls (amplitude > {} of max, |slope| >= {} of median)",
            criterion.min_prominence,
            criterion.min_peak_height,
            criterion.min_reversals,
            criterion.null_fraction,
            criterion.min_slope_fraction
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::hz_to_angular;
    use approx::assert_relative_eq;

    const TD: f64 = 1e-3;

    fn mode(omega: f64, weight: f64) -> ModeParams {
        ModeParams::new(omega, 1.4965e-26, weight).unwrap()
    }

    fn drive() -> DriveConfig {
        DriveConfig::new(1e-22, hz_to_angular(867e3), 0.0, TD).unwrap()
    }

    fn grid(center: f64, half_span: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| center - half_span + 2.0 * half_span * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn pair(spacing_units: f64) -> Vec<ModeParams> {
        let w0 = hz_to_angular(867e3);
        let delta = spacing_units * 2.0 * PI / TD;
        vec![mode(w0 - 0.5 * delta, 0.5), mode(w0 + 0.5 * delta, 0.5)]
    }

    #[test]
    fn single_mode_peak_is_v_over_root_two() {
        let w0 = hz_to_angular(867e3);
        let g = grid(w0, 3.0 * 2.0 * PI / TD, 601);
        let period = 2.0 * PI / w0;
        let s = rms_spectrum(&[mode(w0, 1.0)], &drive(), &g, 26.0 * period, 0.0).unwrap();
        let (imax, &peak) = s
            .rms_velocity
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(imax, 300);
        let vmax = 1e-22 * TD / (2.0 * 1.4965e-26);
        assert_relative_eq!(peak, vmax / 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn single_mode_phase_trace_slope_is_half_drive_time() {
        let w0 = hz_to_angular(867e3);
        let g = grid(w0, 0.9 * PI / TD, 101);
        let s = rms_spectrum(&[mode(w0, 1.0)], &drive(), &g, 20e-6, 0.0).unwrap();
        for (w, p) in g.iter().zip(&s.phase_trace_t0) {
            assert_relative_eq!(*p, 0.5 * (w - w0) * TD, epsilon = 1e-9);
        }
    }

    #[test]
    fn energy_is_symmetric_for_equal_weights() {
        let modes = pair(0.7);
        let w0 = hz_to_angular(867e3);
        let offsets: Vec<f64> = (1..40).map(|i| i as f64 * 0.1 * 2.0 * PI / TD).collect();
        let up: Vec<f64> = offsets.iter().map(|o| w0 + o).collect();
        let down: Vec<f64> = offsets.iter().map(|o| w0 - o).collect();
        let eu = energy_spectrum(&modes, &drive(), &up).unwrap();
        let ed = energy_spectrum(&modes, &drive(), &down).unwrap();
        // Mirror symmetry holds up to the ω_d / (ω_z + ω_d) prefactor.
        let spacing = (modes[1].omega_z - modes[0].omega_z).abs();
        for ((a, b), o) in eu.iter().zip(&ed).zip(&offsets) {
            let tol = (spacing + 2.0 * o) / w0;
            assert!((a - b).abs() <= tol * a.max(*b), "{a} vs {b}");
        }
    }

    #[test]
    fn sidelobe_null_list() {
        let w0 = hz_to_angular(867e3);
        let nulls = sidelobe_nulls(&mode(w0, 1.0), &drive(), 1).unwrap();
        assert_eq!(nulls.len(), 2);
        assert_relative_eq!(nulls[0], w0 - hz_to_angular(1e3), max_relative = 1e-15);
        assert_relative_eq!(nulls[1], w0 + hz_to_angular(1e3), max_relative = 1e-15);
        assert!(sidelobe_nulls(&mode(w0, 1.0), &drive(), 0).is_err());
    }

    #[test]
    fn one_sidelobe_between_consecutive_nulls() {
        let w0 = hz_to_angular(867e3);
        let m = mode(w0, 1.0);
        let nulls = sidelobe_nulls(&m, &drive(), 5).unwrap();
        for pair in nulls.windows(2) {
            if pair[0] < w0 && pair[1] > w0 {
                continue;
            }
            let g = grid(0.5 * (pair[0] + pair[1]), 0.5 * (pair[1] - pair[0]), 401);
            let amps: Vec<f64> = g
                .iter()
                .map(|&w| signed_velocity(&m, &drive().at_frequency(w)).abs())
                .collect();
            assert_eq!(find_peaks(&amps, 0.0).len(), 1);
        }
    }

    #[test]
    fn errors() {
        let w0 = hz_to_angular(867e3);
        assert!(rms_spectrum(&[mode(w0, 1.0)], &drive(), &[], 1e-5, 0.0).is_err());
        assert!(rms_spectrum(&[], &drive(), &[w0], 1e-5, 0.0).is_err());
        assert!(rms_spectrum(&[mode(w0, 1.0)], &drive(), &[w0], 0.0, 0.0).is_err());
        assert!(resolvability(
            &[mode(w0, 1.0)],
            &drive(),
            &[w0],
            1e-5,
            0.0,
            &ResolvabilityCriterion::default()
        )
        .is_err());
    }

    #[test]
    fn degenerate_pair_is_indistinguishable() {
        let w0 = hz_to_angular(867e3);
        let g = grid(w0, 3.0 * 2.0 * PI / TD, 1201);
        let rep = resolvability(
            &pair(0.0),
            &drive(),
            &g,
            20e-6,
            0.0,
            &ResolvabilityCriterion::default(),
        )
        .unwrap();
        assert_eq!(rep.peak_count, 1);
        assert_eq!(rep.phase_reversals, 0);
        assert!(!rep.distinguishable);

        let single = rms_spectrum(&[mode(w0, 1.0)], &drive(), &g, 20e-6, 0.0).unwrap();
        let doubled = rms_spectrum(&pair(0.0), &drive(), &g, 20e-6, 0.0).unwrap();
        for (a, b) in single.rms_velocity.iter().zip(&doubled.rms_velocity) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn wide_pair_resolves_in_both_spectra() {
        let w0 = hz_to_angular(867e3);
        let g = grid(w0, 5.0 * 2.0 * PI / TD, 1001);
        let rep = resolvability(
            &pair(4.0),
            &drive(),
            &g,
            20e-6,
            0.0,
            &ResolvabilityCriterion::default(),
        )
        .unwrap();
        assert_eq!(rep.peak_count, 2);
        assert_eq!(rep.peak_count_coherent, 2);
        assert!(rep.distinguishable);
    }

    #[test]
    fn close_pair_needs_the_phase_trace() {
        let w0 = hz_to_angular(867e3);
        let g = grid(w0, 3.0 * 2.0 * PI / TD, 1201);
        let rep = resolvability(
            &pair(0.25),
            &drive(),
            &g,
            20e-6,
            0.0,
            &ResolvabilityCriterion::default(),
        )
        .unwrap();
        assert_eq!(rep.peak_count, 1);
        assert!(rep.phase_reversals >= 2);
        assert!(rep.distinguishable);
    }

    #[test]
    fn half_spacing_gives_single_energy_peak() {
        let w0 = hz_to_angular(867e3);
        let g = grid(w0, 3.0 * 2.0 * PI / TD, 1201);
        let e = energy_spectrum(&pair(0.5), &drive(), &g).unwrap();
        let peaks = resonance_peaks(&e, &ResolvabilityCriterion::default());
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].index, 600);
    }

    #[test]
    fn phase_unwrapping() {
        let raw = [3.0, -3.0, -2.5, 3.1];
        let u = unwrap_phase(&raw);
        assert_relative_eq!(u[1], 3.0 + (2.0 * PI - 6.0));
        assert!(u.windows(2).all(|w| (w[1] - w[0]).abs() <= PI));
    }
}
