//! Dense f64 tensor engine with tape-based reverse-mode differentiation
//! and an Adam optimizer. Everything learnable in the crate sits on top of
//! this module.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod tape;


pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_chunks, write_chunks, Chunk, RDCK_MAGIC, RDCK_VERSION};
pub use tape::{Tape, ValueId};

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major f64 tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data, grad: None, requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    /// Trainable parameter from data.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let mut t = Tensor::new(shape, data);
        t.requires_grad = true;
        t
    }

    /// Glorot-uniform initialized parameter; `fan` = (fan_in, fan_out).
    pub fn glorot<R: Rng>(shape: Vec<usize>, fan: (usize, usize), rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let limit = (6.0 / (fan.0 + fan.1) as f64).sqrt();
        let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        Tensor::param(shape, data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Accumulate into the grad slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        } else {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }
}

/// Named parameter collection. BTreeMap keeps iteration deterministic, which
/// checkpointing and Adam rely on.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        self.params.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in &self.params {
            if !t.is_finite() {
                return Err(Error::Numeric(format!("parameter {name:?} is non-finite")));
            }
        }
        Ok(())
    }

    /// Serialize all parameters as checkpoint chunks, sorted by name.
    pub fn to_chunks(&self) -> Vec<Chunk> {
        self.params
            .iter()
            .map(|(name, t)| Chunk {
                name: name.clone(),
                extents: t.shape.iter().map(|&e| e as u64).collect(),
                payload: t.data.clone(),
            })
            .collect()
    }

    /// Rebuild a store from chunks; every tensor is marked trainable.
    pub fn from_chunks(chunks: &[Chunk]) -> Self {
        let mut store = ParamStore::new();
        for c in chunks {
            let shape: Vec<usize> = c.extents.iter().map(|&e| e as usize).collect();
            store.insert(&c.name, Tensor::param(shape, c.payload.clone()));
        }
        store
    }
}
