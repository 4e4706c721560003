//! Central finite differences against reverse-mode gradients.

use crate::error::{Error, Result};

/// Maximum relative discrepancy between the autodiff gradient returned by
/// `f` and central differences of its value, over every coordinate.
///
/// `f` maps a parameter vector to `(value, gradient)`. The relative error per
/// coordinate is `|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)`.
pub fn finite_diff_check<F>(f: F, point: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0) {
        return Err(Error::Usage(format!("eps must be positive, got {eps}")));
    }
    let (value, grad) = f(point)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            coordinate: 0,
            message: format!("value {value} at the base point"),
        });
    }
    if grad.len() != point.len() {
        return Err(Error::Usage(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (plus, _) = f(&x)?;
        x[i] = orig - eps;
        let (minus, _) = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                coordinate: i,
                message: format!("f(x+eps) = {plus}, f(x-eps) = {minus}"),
            });
        }
        let fd = (plus - minus) / (2.0 * eps);
        let ad = grad[i];
        let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
