use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // std float methods shadow these in test builds
use num_traits::Float;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment estimates and hyperparameters of the Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Forgets the moment estimates, keeping the hyperparameters.
    pub fn reset(&mut self) {
        self.step = 0;
        self.first_moment.clear();
        self.second_moment.clear();
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!(
                "adam: lr {} beta1 {} beta2 {} eps {}",
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon
            )))
        }
    }
}

/// One bias-corrected Adam update. Gradients are consumed: every parameter's
/// gradient is cleared afterwards. Descends, i.e. treats gradients as those of
/// a loss to minimize.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    state.validate()?;
    if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::MissingGradient { index });
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second_moment = state.first_moment.clone();
    } else if state.first_moment.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step parameter count",
            expected: state.first_moment.len(),
            got: params.len(),
        });
    }
    for (m, p) in state.first_moment.iter().zip(params.iter()) {
        if m.len() != p.len() {
            return Err(Error::DimensionMismatch {
                context: "adam_step moment buffer",
                expected: m.len(),
                got: p.len(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);

    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let grad = p.grad().map(<[f64]>::to_vec).unwrap_or_default();
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            let gk = grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.clear_grad();
    }
    Ok(())
}
