use super::{ParamStore, Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// One AdamW update of `param` in place, with weight decay applied to the
/// parameter directly rather than through the gradient.
pub fn adamw_step<T: Scalar>(param: &mut [T], grad: &[T], state: &mut AdamWState<T>, cfg: &AdamWConfig, lr: f64) {
    assert_eq!(param.len(), grad.len(), "parameter and gradient sizes differ");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let decay = T::one() - lr * T::of(cfg.weight_decay);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        param[i] = param[i] * decay - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// AdamW over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    states: Vec<AdamWState<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        Self {
            config,
            states: params.values().iter().map(|p| AdamWState::new(p.numel())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }

    /// `grads[i]` belongs to the i-th registered parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<(), TensorError> {
        if grads.len() != params.len() {
            return Err(super::mismatch(
                "AdamW::step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((p, g), s) in params.values_mut().iter_mut().zip(grads).zip(&mut self.states) {
            if p.shape() != g.shape() {
                return Err(super::mismatch(
                    "AdamW::step",
                    format!("{:?} vs {:?}", p.shape(), g.shape()),
                ));
            }
            adamw_step(p.data_mut(), g.data(), s, &self.config, lr);
        }
        Ok(())
    }
}
