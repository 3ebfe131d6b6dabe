//! Bias-corrected Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tensor::{GradientMap, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// lr 2e-4, β1 0.5 (DCGAN convention).
    pub fn gan() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn classifier() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.lr > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter name, and the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for every trainable parameter in `store`.
    pub fn new(store: &ParamStore<T>) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (name, p) in &store.params {
            m.insert(name.clone(), Tensor::zeros(p.shape())?);
        }
        Ok(AdamState {
            step: 0,
            v: m.clone(),
            m,
        })
    }

    pub fn bitwise_eq(&self, other: &AdamState<T>) -> bool {
        let eq = |a: &BTreeMap<String, Tensor<T>>, b: &BTreeMap<String, Tensor<T>>| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
        };
        self.step == other.step && eq(&self.m, &other.m) && eq(&self.v, &other.v)
    }
}

/// One Adam update of every parameter in `store`.
///
/// A parameter with no entry in `grads` is updated with a zero gradient.
/// Gradients for tensors outside `store` are ignored, so one gradient map can
/// be shared between several optimizers.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &GradientMap<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in &store.params {
        let (Some(m), Some(v)) = (state.m.get(name), state.v.get(name)) else {
            return Err(Error::InconsistentState(format!(
                "no moment buffers for parameter {name}"
            )));
        };
        if m.shape() != p.shape() || v.shape() != p.shape() {
            return Err(Error::InconsistentState(format!(
                "moment shape {:?} does not match parameter {name} {:?}",
                m.shape(),
                p.shape()
            )));
        }
        if let Some(g) = grads.get(p) {
            if g.shape() != p.shape() {
                return Err(Error::InconsistentState(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let names: Vec<String> = store.params.keys().cloned().collect();
    for name in names {
        let p = &store.params[&name];
        let g = grads.get(p);
        let (m_old, v_old) = (&state.m[&name], &state.v[&name]);
        let n = p.numel();
        let mut pn = Vec::with_capacity(n);
        let mut mn = Vec::with_capacity(n);
        let mut vn = Vec::with_capacity(n);
        for i in 0..n {
            let gi = g.map_or(0.0, |g| g.data()[i].as_f64());
            let m = cfg.beta1 * m_old.data()[i].as_f64() + (1.0 - cfg.beta1) * gi;
            let v = cfg.beta2 * v_old.data()[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let update = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            pn.push(T::from_f64(p.data()[i].as_f64() - update));
            mn.push(T::from_f64(m));
            vn.push(T::from_f64(v));
        }
        let shape = p.shape().to_vec();
        store.params.insert(
            name.clone(),
            Tensor::from_vec(pn, &shape)?.with_requires_grad(true),
        );
        state.m.insert(name.clone(), Tensor::from_vec(mn, &shape)?);
        state.v.insert(name, Tensor::from_vec(vn, &shape)?);
    }
    Ok(())
}
