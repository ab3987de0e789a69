//! AdamW with decoupled weight decay, and the warmup + cosine learning-rate
//! schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates for every parameter in a store.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Update count per parameter; parameters not stepped in a stage keep theirs.
    t: Vec<u64>,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: vec![0; store.len()],
            weight_decay,
        }
    }

    /// One update of every parameter in `groups` from its stored gradient.
    /// Fails without touching anything if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore, groups: &[Group], lr: f64) -> Result<()> {
        let ids: Vec<_> = groups.iter().flat_map(|&g| store.ids_in(g)).collect();
        if let Some(bad) = ids.iter().find(|&&id| !store.get(id).grad.all_finite()) {
            return Err(Error::NonFiniteGrad(store.get(*bad).name.clone()));
        }
        for id in ids {
            let k = id.index();
            self.t[k] += 1;
            let t = self.t[k] as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            let p = store.get_mut(id);
            let range = p.trainable_range();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for j in range {
                let gj = grad[j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                value[j] *= 1.0 - lr * self.weight_decay;
                value[j] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `lr_init`, then cosine annealing to 0 at `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, lr_init: f64) -> Result<f64> {
    if warmup >= total {
        return Err(Error::InvalidArgument(format!(
            "warmup steps {warmup} must be below total steps {total}"
        )));
    }
    if step > total {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total}")));
    }
    if step < warmup {
        return Ok(lr_init * step as f64 / warmup as f64);
    }
    if step == total {
        return Ok(0.0);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(lr_init * 0.5 * (1.0 + (PI * progress).cos()))
}
