use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam moment buffers, indexed like the parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<Option<Vec<T>>>,
    pub v: Vec<Option<Vec<T>>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: usize) -> Self {
        AdamState {
            m: vec![None; params],
            v: vec![None; params],
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.len())
    }
}

/// One Adam update of every trainable parameter that holds a gradient.
///
/// Weight decay is L2 coupled into the gradient (`g + λ·p`) before the
/// moment updates.
pub fn adam_step<T: Element>(store: &mut ParamStore<T>, state: &mut AdamState<T>, config: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let one = T::one();
    let bc1 = T::from_f64(1.0 - state.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - state.beta2.powi(t));
    let lr = T::from_f64(config.learning_rate);
    let wd = T::from_f64(config.weight_decay);
    let eps = T::from_f64(state.eps);

    for (id, p) in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let Some(grad) = p.grad.as_ref() else { continue };
        let n = p.value.numel();
        if grad.numel() != n {
            return Err(Error::Contract(format!(
                "gradient of {} has {} elements, parameter has {n}",
                p.name,
                grad.numel()
            )));
        }
        let m = state.m[id.0].get_or_insert_with(|| vec![T::zero(); n]);
        let v = state.v[id.0].get_or_insert_with(|| vec![T::zero(); n]);
        if m.len() != n {
            return Err(Error::Contract(format!("moment buffer of {} has the wrong size", p.name)));
        }
        let g = grad.data().to_vec();
        let values = p.value.data_mut();
        for i in 0..n {
            let gi = g[i] + wd * values[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
