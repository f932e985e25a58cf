//! Adam with bias correction over a named parameter store.

use std::collections::BTreeMap;

use super::checkpoint::Chunk;
use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Moment buffers and step counter as checkpoint chunks under `opt.`.
    pub fn to_chunks(&self) -> Vec<Chunk> {
        let mut chunks = vec![Chunk {
            name: "opt.step".to_string(),
            extents: vec![1],
            payload: vec![self.step as f64],
        }];
        for (name, buf) in &self.m {
            chunks.push(Chunk {
                name: format!("opt.m.{name}"),
                extents: vec![buf.len() as u64],
                payload: buf.clone(),
            });
        }
        for (name, buf) in &self.v {
            chunks.push(Chunk {
                name: format!("opt.v.{name}"),
                extents: vec![buf.len() as u64],
                payload: buf.clone(),
            });
        }
        chunks
    }

    pub fn restore_chunks(&mut self, chunks: &[Chunk]) {
        for c in chunks {
            if c.name == "opt.step" {
                self.step = c.payload[0] as u64;
            } else if let Some(name) = c.name.strip_prefix("opt.m.") {
                self.m.insert(name.to_string(), c.payload.clone());
            } else if let Some(name) = c.name.strip_prefix("opt.v.") {
                self.v.insert(name.to_string(), c.payload.clone());
            }
        }
    }
}

/// One Adam update over every trainable parameter; gradients must be
/// populated and are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for (name, t) in store.iter() {
        if t.requires_grad && t.grad.is_none() {
            return Err(Error::Contract(format!(
                "adam_step: parameter {name:?} has no gradient"
            )));
        }
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);

    for (name, tensor) in store.iter_mut() {
        if !tensor.requires_grad {
            continue;
        }
        let grad = tensor.grad.as_ref().expect("checked above");
        let n = grad.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        assert_eq!(m.len(), n, "moment buffer shape drifted for {name:?}");
        for i in 0..n {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            tensor.data[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        tensor.zero_grad();
    }
    store.ensure_finite()
}
