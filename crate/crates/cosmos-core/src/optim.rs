//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter Adam state. One instance per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Tensor,
    v: Tensor,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl AdamState {
    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(rows: usize, cols: usize, lr: f64) -> Result<Self> {
        Self::with_betas(rows, cols, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        rows: usize,
        cols: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || beta1 <= 0.0 || beta2 <= 0.0 {
            return Err(Error::Invalid(format!(
                "Adam betas must lie in (0, 1), got {beta1}, {beta2}"
            )));
        }
        if epsilon <= 0.0 || lr <= 0.0 {
            return Err(Error::Invalid(format!(
                "Adam lr and epsilon must be positive, got lr={lr}, epsilon={epsilon}"
            )));
        }
        Ok(AdamState {
            step: 0,
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            beta1,
            beta2,
            epsilon,
            lr,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update; returns the new parameter value and advances the
    /// moment estimates in this state.
    pub fn step(&mut self, param: &Tensor, grad: &Tensor) -> Result<Tensor> {
        if param.shape() != self.m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step(param)",
                lhs: param.shape(),
                rhs: self.m.shape(),
            });
        }
        if grad.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step(grad)",
                lhs: grad.shape(),
                rhs: param.shape(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut out = param.clone();
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
        for i in 0..out.len() {
            let g = grad.data()[i];
            let m = b1 * self.m.data()[i] + (1.0 - b1) * g;
            let v = b2 * self.v.data()[i] + (1.0 - b2) * g * g;
            self.m.data_mut()[i] = m;
            self.v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            out.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        out.check_finite("adam_step")?;
        Ok(out)
    }
}

/// Convenience free function mirroring [`AdamState::step`].
pub fn adam_step(param: &Tensor, grad: &Tensor, state: &mut AdamState) -> Result<Tensor> {
    state.step(param, grad)
}
