//! Gaussian negative log-likelihood with a log-variance parameterization.

use crate::error::{Result, UqError};

/// `(y - mu)^2 / (2 sigma^2) + log(sigma^2) / 2` with `sigma^2 = exp(log_var)`.
///
/// The constant `log(2 pi) / 2` is dropped.
pub fn gaussian_nll_loss(mean: f64, log_var: f64, target: f64) -> Result<f64> {
    if !(mean.is_finite() && log_var.is_finite() && target.is_finite()) {
        return Err(UqError::Input(format!(
            "non-finite loss input (mean={mean}, log_var={log_var}, target={target})"
        )));
    }
    Ok(nll(mean, log_var, target))
}

/// Partial derivatives of [`gaussian_nll_loss`] with respect to the mean and
/// the log-variance.
pub fn gaussian_nll_grad(mean: f64, log_var: f64, target: f64) -> (f64, f64) {
    let inv_var = (-log_var).exp();
    let r = target - mean;
    (-inv_var * r, 0.5 - 0.5 * inv_var * r * r)
}

#[inline]
pub(crate) fn nll(mean: f64, log_var: f64, target: f64) -> f64 {
    let r = target - mean;
    0.5 * (-log_var).exp() * r * r + 0.5 * log_var
}
