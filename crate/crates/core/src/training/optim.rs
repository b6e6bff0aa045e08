//! Adam and AdamW with bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::tensorkit::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Adamw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, only applied by AdamW.
    pub weight_decay: f64,
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }
}

/// One Adam update at step `t` (1-based).
pub fn adam_step<T: Scalar>(theta: &mut Tensor<T>, grad: &Tensor<T>, mom: &mut Moments<T>, t: u64, h: &AdamHyper) {
    let b1 = T::of(h.beta1);
    let b2 = T::of(h.beta2);
    let c1 = T::one() - T::of(h.beta1.powi(t as i32));
    let c2 = T::one() - T::of(h.beta2.powi(t as i32));
    let lr = T::of(h.lr);
    let eps = T::of(h.eps);
    let m = mom.m.data_mut();
    let v = mom.v.data_mut();
    for (i, (p, &g)) in theta.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// AdamW: `theta <- theta - lr * wd * theta`, then the Adam update.
pub fn adamw_step<T: Scalar>(theta: &mut Tensor<T>, grad: &Tensor<T>, mom: &mut Moments<T>, t: u64, h: &AdamHyper) {
    let decay = T::of(h.lr * h.weight_decay);
    for p in theta.data_mut() {
        *p -= decay * *p;
    }
    adam_step(theta, grad, mom, t, h);
}

/// Optimizer state for every trainable parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub hyper: AdamHyper,
    pub step: u64,
    /// `(parameter name, moments)`.
    pub moments: Vec<(String, Moments<T>)>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, hyper: AdamHyper, params: &ParamStore<T>) -> Self {
        let moments = params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| (p.name.clone(), Moments::zeros(p.value.shape())))
            .collect();
        Self {
            kind,
            hyper,
            step: 0,
            moments,
        }
    }

    /// Applies one update. `grads` holds one gradient per trainable parameter, in store order.
    pub fn apply(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        self.step += 1;
        let trainable = params.iter_mut().filter(|p| p.trainable);
        for ((p, g), (_, mom)) in trainable.zip(grads).zip(self.moments.iter_mut()) {
            match self.kind {
                OptimizerKind::Adam => adam_step(&mut p.value, g, mom, self.step, &self.hyper),
                OptimizerKind::Adamw => adamw_step(&mut p.value, g, mom, self.step, &self.hyper),
            }
        }
    }
}
