//! Small dense optimizers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Independent random stream `stream` of the generator seeded with `seed`.
///
/// Every stochastic routine derives its substreams this way, from the run seed and a
/// fixed index (setting, event batch, analyzer pair), so results do not depend on how
/// work is scheduled across threads.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Poisson draw; a nonpositive mean yields zero.
pub fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub max_iterations: usize,
    /// Converged once the gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Converged once an accepted parameter step is shorter than this.
    pub step_tolerance: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Quasi-Newton (BFGS) minimization with a backtracking Armijo line search.
///
/// `objective` returns the value and gradient at a point. Non-finite values are
/// treated as infeasible and rejected by the line search.
pub fn bfgs_minimize<F>(mut objective: F, x0: DVector<f64>, options: &MinimizeOptions) -> Minimum
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    const ARMIJO: f64 = 1e-4;
    let n = x0.len();
    let mut x = x0;
    let (mut value, mut grad) = objective(&x);
    let mut inv_hessian = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        let grad_norm = grad.norm();
        if grad_norm < options.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut direction = -(&inv_hessian * &grad);
        let mut slope = grad.dot(&direction);
        if !(slope < 0.0) {
            inv_hessian.fill_with_identity();
            direction = -grad.clone();
            slope = -grad_norm * grad_norm;
        }
        let direction_norm = direction.norm();

        let mut alpha = 1.0;
        let accepted = loop {
            if alpha * direction_norm < options.step_tolerance {
                break None;
            }
            let candidate = &x + alpha * &direction;
            let (v, g) = objective(&candidate);
            if v.is_finite() && v <= value + ARMIJO * alpha * slope {
                break Some((candidate, v, g));
            }
            alpha *= 0.5;
        };

        let Some((x_new, v_new, g_new)) = accepted else {
            // no admissible step longer than the tolerance remains
            converged = true;
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &inv_hessian * &y;
            let yhy = y.dot(&hy);
            inv_hessian +=
                (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
        }

        let step = s.norm();
        x = x_new;
        value = v_new;
        grad = g_new;
        if step < options.step_tolerance {
            converged = true;
            break;
        }
    }

    let gradient_norm = grad.norm();
    if gradient_norm < options.gradient_tolerance {
        converged = true;
    }
    Minimum {
        x,
        value,
        gradient_norm,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquaresOptions {
    pub max_iterations: usize,
    /// Relative change of the sum of squares below which the fit has converged.
    pub tolerance: f64,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: DVector<f64>,
    /// `(JᵀJ)⁻¹` at the solution, for residuals already scaled by `1/σ`.
    pub covariance: DMatrix<f64>,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg-Marquardt on residuals `r(x)` with Jacobian `∂r/∂x`.
pub fn levenberg_marquardt<F>(mut residuals: F, x0: DVector<f64>, options: &LeastSquaresOptions) -> LeastSquares
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut r, mut jac) = residuals(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..60 {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &x + &step;
            let (r_new, jac_new) = residuals(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new <= cost {
                let relative = (cost - cost_new) / cost.max(1e-300);
                x = candidate;
                r = r_new;
                jac = jac_new;
                cost = cost_new;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if relative < options.tolerance || step.norm() <= 1e-15 * (1.0 + x.norm()) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // the cost cannot be lowered any further at working precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    let jtj = jac.transpose() * &jac;
    let covariance = jtj
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::INFINITY));
    LeastSquares {
        x,
        covariance,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
    }
}

/// One fitted parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub unit: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    pub residual_norm: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of the named parameter; panics if the fit has no such parameter.
    pub fn value(&self, name: &str) -> f64 {
        self.parameter(name)
            .unwrap_or_else(|| panic!("fit has no parameter `{name}`"))
            .value
    }

    pub fn std_error(&self, name: &str) -> f64 {
        self.parameter(name)
            .unwrap_or_else(|| panic!("fit has no parameter `{name}`"))
            .std_error
    }
}

pub(crate) fn fit_parameter(name: &str, unit: &str, value: f64, variance: f64) -> FitParameter {
    FitParameter {
        name: name.to_string(),
        unit: unit.to_string(),
        value,
        std_error: if variance.is_finite() {
            variance.max(0.0).sqrt()
        } else {
            f64::INFINITY
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (v, g)
        };
        let m = bfgs_minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &MinimizeOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn lm_exponential_decay() {
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        let fit = levenberg_marquardt(
            |p| {
                let r = DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() - y));
                let mut j = DMatrix::zeros(ts.len(), 2);
                for (i, t) in ts.iter().enumerate() {
                    let e = (-p[1] * t).exp();
                    j[(i, 0)] = e;
                    j[(i, 1)] = -p[0] * t * e;
                }
                (r, j)
            },
            DVector::from_vec(vec![1.0, 1.0]),
            &LeastSquaresOptions::default(),
        );
        assert!(fit.converged);
        assert!((fit.x[0] - 3.0).abs() < 1e-9 && (fit.x[1] - 1.7).abs() < 1e-9);
        assert!(fit.residual_norm < 1e-9);
    }
}
