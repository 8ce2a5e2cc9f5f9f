use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(numel: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![T::zero(); numel],
            second_moment: vec![T::zero(); numel],
            step_count: 0,
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(param: &mut Tensor<T>, grad: &[T], state: &mut AdamState<T>) -> Result<()> {
    let n = param.numel();
    if grad.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::dim("adam_step", param.shape(), &[grad.len()]));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let one = T::one();
    let step = T::from_f64_lossy(state.learning_rate / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let eps = T::from_f64_lossy(state.epsilon);
    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for ((p, &g), (m, v)) in param.data_mut().iter_mut().zip(grad).zip(moments) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p = *p - step * *m / ((*v * inv_bc2).sqrt() + eps);
    }
    Ok(())
}

/// Adam over an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    config: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn states(&self) -> &[AdamState<T>] {
        &self.states
    }

    /// Applies stored gradients to `params` (always passed in the same
    /// order) and clears them. Parameters without a gradient are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|p| AdamState::new(p.numel(), self.config))
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (param, state) in params.iter_mut().zip(&mut self.states) {
            let Some(grad) = param.grad().map(<[T]>::to_vec) else {
                continue;
            };
            adam_step(param, &grad, state)?;
            param.zero_grad();
        }
        Ok(())
    }
}
