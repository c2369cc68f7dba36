//! Adam optimizer over a `ParamStore`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::store::ParamStore;
use crate::nn::tensor::Tensor;

/// First/second moment accumulators plus hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |_: &Tensor| {};
        let _ = zeros;
        let m = store
            .iter()
            .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
            .collect();
        let v = store
            .iter()
            .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape())))
            .collect();
        AdamState {
            m,
            v,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_defaults(store: &ParamStore) -> Self {
        AdamState::new(store, 1e-4)
    }
}

/// One bias-corrected Adam update. `grads` must cover every parameter
/// with a matching shape.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<()> {
    for (name, param) in store.iter() {
        match grads.get(name) {
            None => {
                return Err(Error::Usage(format!("missing gradient for `{name}`")));
            }
            Some(g) if g.shape() != param.shape() => {
                return Err(Error::Usage(format!(
                    "gradient shape {:?} does not match parameter `{name}` shape {:?}",
                    g.shape(),
                    param.shape()
                )));
            }
            _ => {}
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (name, param) in store.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("moment missing").data_mut();
        let v = state.v.get_mut(name).expect("moment missing").data_mut();
        let p = param.data_mut();
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
