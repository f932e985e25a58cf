//! Sequential attribute extraction from q-hat: category, then translation,
//! rotation, size — each head conditioned on every earlier attribute.

use rand_chacha::ChaCha8Rng;

use super::encoders::ATTR_SCALE;
use super::GeneratorConfig;
use crate::distributions::{
    categorical_sample, mol_sample, CategoricalParams, MixtureParams,
};
use crate::error::Result;
use crate::numerics::{ParamStore, Tape, ValueId};
use crate::transformer::{init_linear, linear};

pub(super) fn init_attribute_params(
    store: &mut ParamStore,
    c: &GeneratorConfig,
    n_categories: usize,
    rng: &mut ChaCha8Rng,
) {
    let k3 = 3 * c.mixture_k;
    let q = c.query_dim;
    init_linear(store, "attr.cat1", q, c.head_hidden, rng);
    init_linear(store, "attr.cat2", c.head_hidden, n_categories, rng);
    init_linear(store, "attr.t1", q + n_categories, c.head_hidden, rng);
    init_linear(store, "attr.t2", c.head_hidden, 3 * k3, rng);
    init_linear(store, "attr.r1", q + n_categories + 3, c.head_hidden, rng);
    init_linear(store, "attr.r2", c.head_hidden, k3, rng);
    init_linear(store, "attr.s1", q + n_categories + 4, c.head_hidden, rng);
    init_linear(store, "attr.s2", c.head_hidden, 3 * k3, rng);
}

fn head(tape: &mut Tape, store: &ParamStore, name: &str, input: ValueId) -> ValueId {
    let h = linear(tape, store, &format!("attr.{name}1"), input);
    let h = tape.relu(h);
    linear(tape, store, &format!("attr.{name}2"), h)
}

fn one_hot(n: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

/// Distribution parameters produced for one object slot. Mixture rows are
/// laid out [dim, 3K].
#[derive(Debug, Clone, Copy)]
pub struct AttributePrediction {
    pub category_logits: ValueId,
    /// Absent for 'end' targets.
    pub translation: Option<ValueId>,
    pub rotation: Option<ValueId>,
    pub size: Option<ValueId>,
}

/// Concrete attribute values (teacher ground truth or samples).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeValues {
    pub category: usize,
    pub translation: [f64; 3],
    pub rotation: f64,
    pub size: [f64; 3],
}

/// Teacher-forced heads: every later head conditions on the ground-truth
/// earlier attributes. With `values: None` (an 'end' target) only the
/// category head runs.
pub fn extract_attributes(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    n_categories: usize,
    qhat: ValueId,
    values: Option<&AttributeValues>,
) -> AttributePrediction {
    let category_logits = head(tape, store, "cat", qhat);
    let Some(v) = values else {
        return AttributePrediction {
            category_logits,
            translation: None,
            rotation: None,
            size: None,
        };
    };
    let cat_vec = tape.value(vec![1, n_categories], one_hot(n_categories, v.category));
    let qc = tape.concat(&[qhat, cat_vec], 1);
    let t_flat = head(tape, store, "t", qc);
    let translation = tape.reshape(t_flat, vec![3, 3 * c.mixture_k]);

    let t_vec = tape.value(vec![1, 3], v.translation.to_vec());
    let qct = tape.concat(&[qc, t_vec], 1);
    let r_flat = head(tape, store, "r", qct);
    let rotation = tape.reshape(r_flat, vec![1, 3 * c.mixture_k]);

    let r_vec = tape.value(vec![1, 1], vec![v.rotation]);
    let qctr = tape.concat(&[qct, r_vec], 1);
    let s_flat = head(tape, store, "s", qctr);
    let size = tape.reshape(s_flat, vec![3, 3 * c.mixture_k]);

    AttributePrediction {
        category_logits,
        translation: Some(translation),
        rotation: Some(rotation),
        size: Some(size),
    }
}

/// Sampling-mode heads: draw the category (optionally masked), then each
/// attribute from its mixture, feeding samples forward. Returns normalized
/// values.
#[allow(clippy::too_many_arguments)]
pub fn sample_attributes(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    n_categories: usize,
    qhat: ValueId,
    banned_categories: &[usize],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AttributeValues> {
    let logits_id = head(tape, store, "cat", qhat);
    let mut logits = tape.data(logits_id).to_vec();
    for &b in banned_categories {
        logits[b] = -1e30;
    }
    let category = categorical_sample(&CategoricalParams::new(logits), rng, temperature)?;

    let cat_vec = tape.value(vec![1, n_categories], one_hot(n_categories, category));
    let qc = tape.concat(&[qhat, cat_vec], 1);
    let t_flat = head(tape, store, "t", qc);
    let t_rows = tape.data(t_flat).to_vec();
    let mut translation = [0.0; 3];
    for d in 0..3 {
        let row = &t_rows[d * 3 * c.mixture_k..(d + 1) * 3 * c.mixture_k];
        translation[d] = mol_sample(&MixtureParams::from_row(row), rng, temperature)?
            .clamp(-1.0, 1.0);
    }

    let t_vec = tape.value(vec![1, 3], translation.to_vec());
    let qct = tape.concat(&[qc, t_vec], 1);
    let r_flat = head(tape, store, "r", qct);
    let r_row = tape.data(r_flat).to_vec();
    let rotation = mol_sample(&MixtureParams::from_row(&r_row), rng, temperature)?
        .clamp(-1.0, 1.0);

    let r_vec = tape.value(vec![1, 1], vec![rotation]);
    let qctr = tape.concat(&[qct, r_vec], 1);
    let s_flat = head(tape, store, "s", qctr);
    let s_rows = tape.data(s_flat).to_vec();
    let mut size = [0.0; 3];
    for d in 0..3 {
        let row = &s_rows[d * 3 * c.mixture_k..(d + 1) * 3 * c.mixture_k];
        size[d] = mol_sample(&MixtureParams::from_row(row), rng, temperature)?
            .clamp(-1.0, 1.0);
    }

    Ok(AttributeValues { category, translation, rotation, size })
}

/// Raw shape-condition vector (q-hat, one-hot category, t, r, s) as a tape
/// value; built strictly in head order.
pub fn shape_condition(
    tape: &mut Tape,
    n_categories: usize,
    qhat: ValueId,
    values: &AttributeValues,
) -> ValueId {
    let cat_vec = tape.value(vec![1, n_categories], one_hot(n_categories, values.category));
    let t_vec = tape.value(vec![1, 3], values.translation.to_vec());
    let r_vec = tape.value(vec![1, 1], vec![values.rotation]);
    let s_vec = tape.value(vec![1, 3], values.size.to_vec());
    tape.concat(&[qhat, cat_vec, t_vec, r_vec, s_vec], 1)
}

/// Encoded scalar value for mid-stack conditioning injections.
pub fn value_encoding(v: f64, dims: usize) -> Vec<f64> {
    crate::distributions::pos_enc(&[v * ATTR_SCALE], dims)
}
