//! Central finite-difference gradients, the oracle every analytic gradient
//! in this crate is tested against.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function:
/// entry i = (f(x + h e_i) - f(x - h e_i)) / (2h).
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Invalid(format!("step size must be positive, got {h}")));
    }
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad evaluation"));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Max over entries of |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Used by tests throughout the crate.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, abs_floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(n.abs()).max(abs_floor)
            }
        })
        .fold(0.0, f64::max)
}
