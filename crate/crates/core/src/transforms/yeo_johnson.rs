//! Yeo-Johnson power transform with a maximum-likelihood exponent.

use std::f64::consts::PI;

use super::{check_finite, TransformError};
use crate::optim::golden_section_max;

/// Search interval for the exponent.
pub const LAMBDA_MIN: f64 = -5.0;
pub const LAMBDA_MAX: f64 = 5.0;
/// Number of points in the coarse scan that brackets the maximum.
pub const LAMBDA_GRID_POINTS: usize = 101;
/// Absolute tolerance of the golden-section refinement.
pub const LAMBDA_TOL: f64 = 1e-6;

/// A fitted Yeo-Johnson transform followed by standardization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YeoJohnsonTransform {
    pub lambda: f64,
    pub fitted_mean: f64,
    pub fitted_std: f64,
}

impl YeoJohnsonTransform {
    /// Builds a transform from stored parameters, validating its invariants.
    pub fn new(lambda: f64, fitted_mean: f64, fitted_std: f64) -> Result<Self, TransformError> {
        if !lambda.is_finite() || !(LAMBDA_MIN..=LAMBDA_MAX).contains(&lambda) {
            return Err(TransformError::InvalidParameter(format!(
                "lambda {lambda} outside [{LAMBDA_MIN}, {LAMBDA_MAX}]"
            )));
        }
        if !fitted_mean.is_finite() {
            return Err(TransformError::InvalidParameter(format!("mean {fitted_mean} is not finite")));
        }
        if !(fitted_std.is_finite() && fitted_std > 0.0) {
            return Err(TransformError::InvalidParameter(format!("std {fitted_std} must be positive")));
        }
        Ok(Self { lambda, fitted_mean, fitted_std })
    }

    /// Fits the exponent by maximum likelihood, then records the mean and
    /// standard deviation of the transformed sample.
    pub fn fit(data: &[f64]) -> Result<Self, TransformError> {
        check_finite(data)?;
        if data.len() < 3 {
            return Err(TransformError::TooFewValues { needed: 3, got: data.len() });
        }
        if is_constant(data) {
            return Err(TransformError::Degenerate);
        }

        let lambda = fit_lambda(data);
        let transformed: Vec<f64> = data.iter().map(|&x| forward_raw(x, lambda)).collect();
        let (mean, var) = mean_and_variance(&transformed);
        let std = var.sqrt();
        if !(std.is_finite() && std > 0.0) {
            return Err(TransformError::Degenerate);
        }
        Self::new(lambda, mean, std)
    }

    pub fn forward(&self, x: f64) -> f64 {
        (forward_raw(x, self.lambda) - self.fitted_mean) / self.fitted_std
    }

    pub fn inverse(&self, y: f64) -> f64 {
        inverse_raw(y * self.fitted_std + self.fitted_mean, self.lambda)
    }
}

/// The Yeo-Johnson transform of a single value.
///
/// Non-negative inputs use the `(x + 1)` base and negative inputs the
/// `(1 - x)` base, with logarithmic branches at `lambda = 0` and
/// `lambda = 2` respectively.
pub fn yeo_johnson_forward(x: f64, lambda: f64) -> Result<f64, TransformError> {
    if !x.is_finite() || !lambda.is_finite() {
        return Err(TransformError::NonFinite);
    }
    Ok(forward_raw(x, lambda))
}

/// Exact inverse of [`yeo_johnson_forward`].
///
/// Values outside the range of the transform (possible only for
/// `lambda < 0` above zero or `lambda > 2` below zero) saturate to
/// `±f64::MAX`.
pub fn yeo_johnson_inverse(y: f64, lambda: f64) -> Result<f64, TransformError> {
    if !y.is_finite() || !lambda.is_finite() {
        return Err(TransformError::NonFinite);
    }
    Ok(inverse_raw(y, lambda))
}

// expm1/ln1p keep every branch continuous in lambda through the log limits.
fn forward_raw(x: f64, lambda: f64) -> f64 {
    if x >= 0.0 {
        let l1p = x.ln_1p();
        if lambda == 0.0 {
            l1p
        } else {
            (lambda * l1p).exp_m1() / lambda
        }
    } else {
        let two_minus = 2.0 - lambda;
        let l1p = (-x).ln_1p();
        if two_minus == 0.0 {
            -l1p
        } else {
            -(two_minus * l1p).exp_m1() / two_minus
        }
    }
}

fn inverse_raw(y: f64, lambda: f64) -> f64 {
    if y >= 0.0 {
        if lambda == 0.0 {
            return y.exp_m1().min(f64::MAX);
        }
        let arg = lambda * y;
        if arg <= -1.0 {
            return f64::MAX;
        }
        (arg.ln_1p() / lambda).exp_m1().min(f64::MAX)
    } else {
        let two_minus = 2.0 - lambda;
        if two_minus == 0.0 {
            return (-(-y).exp_m1()).max(-f64::MAX);
        }
        let arg = -two_minus * y;
        if arg <= -1.0 {
            return -f64::MAX;
        }
        (-(arg.ln_1p() / two_minus).exp_m1()).max(-f64::MAX)
    }
}

/// Gaussian profile log-likelihood of the transformed sample, including the
/// Jacobian of the transform.
///
/// A zero-variance or non-finite transformed sample yields `-inf`.
pub fn yeo_johnson_log_likelihood(data: &[f64], lambda: f64) -> f64 {
    let n = data.len() as f64;
    if data.is_empty() {
        return f64::NEG_INFINITY;
    }
    let transformed: Vec<f64> = data.iter().map(|&x| forward_raw(x, lambda)).collect();
    let (_, var) = mean_and_variance(&transformed);
    if !(var.is_finite() && var > 0.0) {
        return f64::NEG_INFINITY;
    }
    let jacobian: f64 = data.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    let ll = -0.5 * n * ((2.0 * PI * var).ln() + 1.0) + (lambda - 1.0) * jacobian;
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

fn fit_lambda(data: &[f64]) -> f64 {
    let step = (LAMBDA_MAX - LAMBDA_MIN) / (LAMBDA_GRID_POINTS - 1) as f64;
    let grid_point = |i: usize| LAMBDA_MIN + step * i as f64;

    let mut best_i = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for i in 0..LAMBDA_GRID_POINTS {
        let ll = yeo_johnson_log_likelihood(data, grid_point(i));
        if ll > best_ll {
            best_ll = ll;
            best_i = i;
        }
    }
    let lo = grid_point(best_i.saturating_sub(1));
    let hi = grid_point((best_i + 1).min(LAMBDA_GRID_POINTS - 1));
    let refined = golden_section_max(|l| yeo_johnson_log_likelihood(data, l), lo, hi, LAMBDA_TOL, 200);
    if refined.value >= best_ll {
        refined.x
    } else {
        grid_point(best_i)
    }
}

fn is_constant(data: &[f64]) -> bool {
    data.iter().all(|&v| v == data[0])
}

pub(crate) fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}
