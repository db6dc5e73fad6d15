use crate::error::{Error, Result};
use crate::numerics::{Gradients, Owner, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus a step count for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            steps: vec![0; store.len()],
        }
    }
}

/// One bias-corrected Adam update of every parameter whose owner is
/// `active`, then re-zeroes row 0 of each table in `padding`.
///
/// Fails without touching anything if an active gradient is not finite.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    active: impl Fn(Owner) -> bool,
    padding: &[ParamId],
) -> Result<()> {
    let ids: Vec<ParamId> = store.ids().filter(|&id| active(store.owner(id))).collect();
    if let Some(&bad) = ids.iter().find(|&&id| !grads.get(id).is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", store.name(bad))));
    }
    for id in ids {
        let k = id.index();
        state.steps[k] += 1;
        let t = state.steps[k] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let g = grads.get(id).data();
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (((p, &gi), mi), vi) in store.get_mut(id).data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    for &id in padding {
        store.get_mut(id).row_slice_mut(0).fill(0.0);
    }
    Ok(())
}
