//! Adaptive-moment (Adam) updates with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Moments {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One Adam update of `param` in place.
pub fn adaptive_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut Moments<T>,
    lr: T,
    cfg: &AdamConfig<T>,
) {
    debug_assert_eq!(param.len(), grad.len());
    state.t += 1;
    let t = state.t as i32;
    let one = T::one();
    let c1 = one - cfg.beta1.powi(t);
    let c2 = one - cfg.beta2.powi(t);
    let m = state.m.data_mut();
    for (mi, &g) in m.iter_mut().zip(grad) {
        *mi = cfg.beta1 * *mi + (one - cfg.beta1) * g;
    }
    let v = state.v.data_mut();
    for (vi, &g) in v.iter_mut().zip(grad) {
        *vi = cfg.beta2 * *vi + (one - cfg.beta2) * g * g;
    }
    let (m, v) = (state.m.data(), state.v.data());
    for ((p, &mi), &vi) in param.iter_mut().zip(m).zip(v) {
        let mhat = mi / c1;
        let vhat = vi / c2;
        *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// Adam state for a whole parameter store, keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub config: AdamConfig<T>,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig<T>) -> Self {
        Adam {
            config,
            moments: BTreeMap::new(),
        }
    }

    /// Updates every parameter that has a gradient, with a per-parameter
    /// learning rate. Parameters absent from `grads` are left untouched.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &Gradients<T>,
        lr: impl Fn(&str) -> T,
    ) {
        for (id, g) in grads.iter() {
            let name = store.name(id).to_string();
            let rate = lr(&name);
            let state = self
                .moments
                .entry(name)
                .or_insert_with(|| Moments::zeros(g.shape()));
            adaptive_step(
                store.get_mut(id).data_mut(),
                g.data(),
                state,
                rate,
                &self.config,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = vec![0.5f64, -1.0];
        let mut s = Moments::zeros(&[2]);
        for _ in 0..5 {
            adaptive_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamConfig::default());
        }
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn constant_gradient_moves_by_lr_times_sign() {
        // With a constant gradient both bias-corrected moments equal g and g^2
        // exactly, so each update is lr * g / (|g| + eps) -> lr * sign(g).
        let lr = 0.01;
        for &g in &[3.0f64, -0.25] {
            let mut p = vec![0.0];
            let mut s = Moments::zeros(&[1]);
            let mut last = 0.0;
            for _ in 0..2000 {
                let before = p[0];
                adaptive_step(&mut p, &[g], &mut s, lr, &AdamConfig::default());
                last = p[0] - before;
            }
            assert!((last + lr * g.signum()).abs() < 1e-9, "step {last}");
        }
    }

    #[test]
    fn single_precision_update() {
        let mut p = vec![1.0f32];
        let mut s = Moments::zeros(&[1]);
        adaptive_step(&mut p, &[2.0], &mut s, 0.1, &AdamConfig::default());
        assert!((p[0] - 0.9).abs() < 1e-5);
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let run = || {
            let mut p = vec![0.1f64, 0.2, 0.3];
            let mut s = Moments::zeros(&[3]);
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| (x * k as f64).sin()).collect();
                adaptive_step(&mut p, &g, &mut s, 0.05, &AdamConfig::default());
            }
            p
        };
        assert_eq!(run(), run());
    }
}
