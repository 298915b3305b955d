//! Exponential background fit to first-photon arrival histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_NONEMPTY_BINS: usize = 5;
const NEWTON_ITERATIONS: usize = 50;

/// `A exp(−t/τ)` evaluated at bin centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub amplitude: f64,
    pub tau: f64,
}

impl ExponentialFit {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-t / self.tau).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundFit {
    pub params: ExponentialFit,
    /// counts − fit, per bin.
    pub residuals: Vec<f64>,
}

/// Fits `A exp(−t/τ)` to a histogram.
///
/// A weighted least-squares line through the log-counts (weights = counts,
/// empty bins skipped) gives the starting point; Newton iterations on the
/// Poisson likelihood then refine it. At the likelihood optimum the residuals
/// sum to zero.
pub fn fit_exponential_background(bin_centers: &[f64], counts: &[f64]) -> Result<BackgroundFit> {
    if bin_centers.len() != counts.len() {
        return Err(Error::invalid(
            "counts",
            "length differs from the bin centers",
        ));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("counts", "must be finite and non-negative"));
    }
    let nonempty = counts.iter().filter(|&&c| c > 0.0).count();
    if nonempty < MIN_NONEMPTY_BINS {
        return Err(Error::FitFailure {
            reason: format!("{nonempty} nonempty bins, need at least {MIN_NONEMPTY_BINS}"),
            best_residual: f64::NAN,
        });
    }

    // Work in t − t̄ to keep the normal equations well conditioned.
    let total: f64 = counts.iter().sum();
    let t_mean = bin_centers
        .iter()
        .zip(counts)
        .map(|(t, c)| t * c)
        .sum::<f64>()
        / total;

    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &c) in bin_centers.iter().zip(counts) {
        if c > 0.0 {
            let x = t - t_mean;
            let y = c.ln();
            sw += c;
            sx += c * x;
            sy += c * y;
            sxx += c * x * x;
            sxy += c * x * y;
        }
    }
    let det = sw * sxx - sx * sx;
    if det.abs() <= f64::EPSILON * sw * sxx {
        return Err(Error::FitFailure {
            reason: "bin centers do not span a time range".into(),
            best_residual: f64::NAN,
        });
    }
    let slope = (sw * sxy - sx * sy) / det;
    let mut log_a = (sy - slope * sx) / sw;
    let mut rate = -slope;

    for _ in 0..NEWTON_ITERATIONS {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &c) in bin_centers.iter().zip(counts) {
            let x = t - t_mean;
            let f = (log_a - rate * x).exp();
            g0 += c - f;
            g1 -= x * (c - f);
            h00 += f;
            h01 -= x * f;
            h11 += x * x * f;
        }
        let det = h00 * h11 - h01 * h01;
        if det.is_nan() || det <= 0.0 {
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        log_a += d0;
        rate += d1;
        if d0.abs() < 1e-13 && (d1 * bin_centers.len() as f64).abs() < 1e-13 * rate.abs().max(1.0) {
            break;
        }
    }

    if rate.is_nan() || rate <= 0.0 || !log_a.is_finite() {
        return Err(Error::FitFailure {
            reason: "histogram does not decay".into(),
            best_residual: f64::NAN,
        });
    }
    let params = ExponentialFit {
        amplitude: (log_a + rate * t_mean).exp(),
        tau: 1.0 / rate,
    };
    let residuals = bin_centers
        .iter()
        .zip(counts)
        .map(|(&t, &c)| c - (log_a - rate * (t - t_mean)).exp())
        .collect();
    Ok(BackgroundFit { params, residuals })
}
