//! Bounded Levenberg-Marquardt for small dense problems.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    fn residual_count(&self) -> usize;
    fn param_count(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Row-major `residual_count × param_count` Jacobian of the residuals.
    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Clone, Debug)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative cost decrease below which an accepted step counts as converged.
    pub ftol: f64,
    /// Relative parameter change below which an accepted step counts as converged.
    pub xtol: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// ½ Σ r².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// JᵀJ at the solution.
    pub normal_matrix: DMatrix<f64>,
}

impl LmReport {
    /// Parameter covariance `(JᵀJ)⁻¹ σ²` with `σ² = 2 cost / (n − p)`.
    pub fn covariance(&self, residual_count: usize) -> Option<DMatrix<f64>> {
        let p = self.params.len();
        let dof = residual_count.checked_sub(p).filter(|&d| d > 0)?;
        let sigma2 = 2.0 * self.cost / dof as f64;
        self.normal_matrix
            .clone()
            .try_inverse()
            .map(|inv| inv * sigma2)
    }
}

fn clamp_into(params: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((p, lo), hi) in params.iter_mut().zip(lower).zip(upper) {
        *p = p.clamp(*lo, *hi);
    }
}

fn half_sum_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

/// Minimizes ½‖r(p)‖² with `lower ≤ p ≤ upper`, projecting every trial step
/// onto the box. Damping is Marquardt's `λ diag(JᵀJ)`, so the iteration is
/// insensitive to parameter scale.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &LmConfig,
) -> LmReport {
    let n = problem.residual_count();
    let p = problem.param_count();
    debug_assert_eq!(initial.len(), p);

    let mut x = initial.to_vec();
    clamp_into(&mut x, lower, upper);
    let mut r = vec![0.0; n];
    let mut r_trial = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, p);
    problem.residuals(&x, &mut r);
    let mut cost = half_sum_sq(&r);
    problem.jacobian(&x, &mut jac);

    let mut lambda = config.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let diag_floor = jtj.diagonal().max() * 1e-15;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp_into(&mut trial, lower, upper);
            problem.residuals(&trial, &mut r_trial);
            let trial_cost = half_sum_sq(&r_trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_cost = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                let rel_step = x
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                x = trial;
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_cost < config.ftol || rel_step < config.xtol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: a (possibly bound-constrained) minimum.
            converged = true;
            break;
        }
        problem.jacobian(&x, &mut jac);
        if converged {
            break;
        }
    }

    LmReport {
        params: x,
        cost,
        iterations,
        converged,
        normal_matrix: jac.transpose() * &jac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// y = a exp(−b t)
    struct Decay {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for Decay {
        fn residual_count(&self) -> usize {
            self.t.len()
        }
        fn param_count(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for ((o, t), y) in out.iter_mut().zip(&self.t).zip(&self.y) {
                *o = p[0] * (-p[1] * t).exp() - y;
            }
        }
        fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
            for (i, t) in self.t.iter().enumerate() {
                let e = (-p[1] * t).exp();
                out[(i, 0)] = e;
                out[(i, 1)] = -p[0] * t * e;
            }
        }
    }

    fn decay() -> Decay {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        Decay { t, y }
    }

    #[test]
    fn recovers_exact_parameters() {
        let rep = levenberg_marquardt(
            &decay(),
            &[1.0, 0.5],
            &[0.0, 0.0],
            &[10.0, 10.0],
            &LmConfig::default(),
        );
        assert!(rep.converged);
        assert_relative_eq!(rep.params[0], 3.0, max_relative = 1e-8);
        assert_relative_eq!(rep.params[1], 1.7, max_relative = 1e-8);
    }

    #[test]
    fn respects_bounds() {
        let rep = levenberg_marquardt(
            &decay(),
            &[1.0, 0.5],
            &[0.0, 0.0],
            &[2.0, 10.0],
            &LmConfig::default(),
        );
        assert!(rep.params[0] <= 2.0);
        assert_relative_eq!(rep.params[0], 2.0);
    }
}
