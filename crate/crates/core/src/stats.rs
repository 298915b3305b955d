//! Small statistics toolkit for the verification checks.

use std::f64::consts::PI;

/// Sample mean and standard error of the mean. `None` for fewer than two values.
pub fn mean_and_sem(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample p-value, `Q_KS(λ)` with Stephens' small-sample
/// correction `λ = (√n_e + 0.12 + 0.11/√n_e) D`.
pub fn ks_p_value(d: f64, na: usize, nb: usize) -> f64 {
    if na == 0 || nb == 0 {
        return 1.0;
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    kolmogorov_q(lambda)
}

/// `Q_KS(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2 k² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1.18 {
        // Alternate form, fast for small λ.
        if lambda <= 0.0 {
            return 1.0;
        }
        let y = (-PI * PI / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..50).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        return (1.0 - (2.0 * PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Least-squares `y ≈ a cos(ωx) + b sin(ωx) + c`. Returns `(amplitude, phase, offset)`
/// with `y ≈ amplitude cos(ωx − phase) + offset`.
pub fn fit_sinusoid(x: &[f64], y: &[f64], omega: f64) -> Option<(f64, f64, f64)> {
    sinusoid_coefficients(x, y, omega).map(|s| (s[0].hypot(s[1]), s[1].atan2(s[0]), s[2]))
}

fn sinusoid_coefficients(x: &[f64], y: &[f64], omega: f64) -> Option<nalgebra::Vector3<f64>> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let (s, c) = (omega * xi).sin_cos();
        let row = nalgebra::Vector3::new(c, s, 1.0);
        ata += row * row.transpose();
        aty += row * yi;
    }
    Some(ata.cholesky()?.solve(&aty))
}

/// Residual sum of squares of the sinusoid fit at `omega`.
fn sinusoid_rss(x: &[f64], y: &[f64], omega: f64) -> f64 {
    let Some(s) = sinusoid_coefficients(x, y, omega) else {
        return f64::INFINITY;
    };
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let (sn, cs) = (omega * xi).sin_cos();
            (yi - s[0] * cs - s[1] * sn - s[2]).powi(2)
        })
        .sum()
}

/// Frequency in `[omega_lo, omega_hi]` whose sinusoid fit leaves the smallest
/// residual, scanned on `steps` points and refined by golden section.
pub fn dominant_frequency(
    x: &[f64],
    y: &[f64],
    omega_lo: f64,
    omega_hi: f64,
    steps: usize,
) -> Option<f64> {
    if steps < 2 || omega_hi <= omega_lo {
        return None;
    }
    let power = |w: f64| -sinusoid_rss(x, y, w);
    let dw = (omega_hi - omega_lo) / (steps - 1) as f64;
    let (best, _) = (0..steps)
        .map(|i| {
            let w = omega_lo + dw * i as f64;
            (w, power(w))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    let (mut a, mut b) = ((best - dw).max(omega_lo), (best + dw).min(omega_hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Some(0.5 * (a + b))
}

/// Log-linear fit `y ≈ A exp(−γ x)` to positive samples; returns `γ`.
pub fn decay_rate(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&a, &v)| (a, v.ln()))
        .collect();
    crate::spectroscopy::linear_slope(&pts).map(|s| -s)
}
