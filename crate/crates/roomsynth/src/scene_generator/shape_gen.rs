//! Causal shape transformer over anchor latents. Position i predicts the
//! i-th (ascending-sorted) anchor latent; x, y, z, and id read out at
//! increasing depths, and each sampled/teacher value is injected back into
//! the residual stream right after its readout so later heads condition on
//! it.

use rand_chacha::ChaCha8Rng;

use super::attributes::value_encoding;
use super::GeneratorConfig;
use crate::distributions::{categorical_sample, mol_sample, CategoricalParams, MixtureParams};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, ValueId};
use crate::shape_codec::AnchorLatentSet;
use crate::transformer::{
    attn_block, attn_block_step, causal_mask, init_attn_block, init_linear, linear, BlockKv,
};

pub(super) fn init_shape_params(
    store: &mut ParamStore,
    c: &GeneratorConfig,
    n_categories: usize,
    rng: &mut ChaCha8Rng,
) {
    let w = c.shape_width;
    let pd = c.anchor_pos_dims;
    init_linear(store, "shape.proj", c.cond_width(n_categories), w, rng);
    for name in ["embx", "emby", "embz", "embid"] {
        init_linear(store, &format!("shape.{name}"), pd, w, rng);
    }
    for name in ["injx", "injy", "injz"] {
        init_linear(store, &format!("shape.{name}"), pd, w, rng);
    }
    for i in 0..c.shape_layers {
        init_attn_block(store, &format!("shape.attn{i}"), c.shape_spec(), rng);
    }
    let k3 = 3 * c.mixture_k;
    for (name, out) in [("headx", k3), ("heady", k3), ("headz", k3)] {
        init_linear(store, &format!("shape.{name}1"), w, c.head_hidden, rng);
        init_linear(store, &format!("shape.{name}2"), c.head_hidden, out, rng);
    }
    init_linear(store, "shape.headid1", w, c.head_hidden, rng);
    init_linear(store, "shape.headid2", c.head_hidden, c.codebook_size, rng);
}

fn head(tape: &mut Tape, store: &ParamStore, name: &str, x: ValueId) -> ValueId {
    let h = linear(tape, store, &format!("shape.{name}1"), x);
    let h = tape.relu(h);
    linear(tape, store, &format!("shape.{name}2"), h)
}

/// Token embedding of one already-generated anchor latent: the sum of four
/// learned embeddings of its encoded x, y, z, and id.
fn latent_embedding(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    anchor: &[f64; 3],
    code: usize,
) -> ValueId {
    let pd = c.anchor_pos_dims;
    let ex = tape.value(vec![1, pd], value_encoding(anchor[0], pd));
    let ey = tape.value(vec![1, pd], value_encoding(anchor[1], pd));
    let ez = tape.value(vec![1, pd], value_encoding(anchor[2], pd));
    let eid = tape.value(vec![1, pd], crate::distributions::pos_enc(&[code as f64], pd));
    let hx = linear(tape, store, "shape.embx", ex);
    let hy = linear(tape, store, "shape.emby", ey);
    let hz = linear(tape, store, "shape.embz", ez);
    let hid = linear(tape, store, "shape.embid", eid);
    let a = tape.add(hx, hy);
    let b = tape.add(hz, hid);
    tape.add(a, b)
}

/// Per-position injection rows for one coordinate axis of the target set.
fn injection_rows(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    name: &str,
    values: &[f64],
) -> ValueId {
    let pd = c.anchor_pos_dims;
    let mut data = Vec::with_capacity(values.len() * pd);
    for &v in values {
        data.extend(value_encoding(v, pd));
    }
    let enc = tape.value(vec![values.len(), pd], data);
    linear(tape, store, &format!("shape.{name}"), enc)
}

/// Distribution parameters for all M steps of a teacher-forced pass.
#[derive(Debug, Clone, Copy)]
pub struct ShapeParams {
    /// [M, 3K] mixture rows per axis.
    pub x: ValueId,
    pub y: ValueId,
    pub z: ValueId,
    /// [M, |D|] logits.
    pub id_logits: ValueId,
}

/// Teacher-forced pass over a full sorted anchor-latent set: one call yields
/// the distribution parameters of every step.
pub fn shape_teacher_forward(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    cond_raw: ValueId,
    target: &AnchorLatentSet,
) -> Result<ShapeParams> {
    let m = target.len();
    if m != c.m_anchors {
        return Err(Error::Contract(format!(
            "target has {m} anchor latents, model expects {}",
            c.m_anchors
        )));
    }
    let cond = linear(tape, store, "shape.proj", cond_raw);
    let mut tokens = vec![cond];
    for (anchor, code) in target.pairs().take(m - 1) {
        tokens.push(latent_embedding(tape, store, c, &anchor, code));
    }
    let mut h = tape.concat(&tokens, 0);
    let mask = tape.value(vec![m, m], causal_mask(m));

    let xs: Vec<f64> = target.anchors().iter().map(|a| a[0]).collect();
    let ys: Vec<f64> = target.anchors().iter().map(|a| a[1]).collect();
    let zs: Vec<f64> = target.anchors().iter().map(|a| a[2]).collect();

    let mut layer = 0;
    let mut run_to = |tape: &mut Tape, h: ValueId, depth: usize| -> ValueId {
        let mut h = h;
        while layer < depth {
            h = attn_block(tape, store, &format!("shape.attn{layer}"), c.shape_spec(), h, Some(mask));
            layer += 1;
        }
        h
    };

    h = run_to(tape, h, c.readout_depths[0]);
    let x_params = head(tape, store, "headx", h);
    let inj = injection_rows(tape, store, c, "injx", &xs);
    h = tape.add(h, inj);

    h = run_to(tape, h, c.readout_depths[1]);
    let y_params = head(tape, store, "heady", h);
    let inj = injection_rows(tape, store, c, "injy", &ys);
    h = tape.add(h, inj);

    h = run_to(tape, h, c.readout_depths[2]);
    let z_params = head(tape, store, "headz", h);
    let inj = injection_rows(tape, store, c, "injz", &zs);
    h = tape.add(h, inj);

    h = run_to(tape, h, c.readout_depths[3]);
    let id_logits = head(tape, store, "headid", h);

    Ok(ShapeParams { x: x_params, y: y_params, z: z_params, id_logits })
}

/// Chooses the next value at each readout; sampling and teacher-forced
/// replay share the exact same stepping code through this trait.
pub trait StepDriver {
    /// Pick a coordinate given the mixture row; `axis` is 0/1/2 for x/y/z.
    fn pick_coord(&mut self, step: usize, axis: usize, mixture_row: &[f64]) -> Result<f64>;
    fn pick_id(&mut self, step: usize, logits: &[f64]) -> Result<usize>;
}

struct SamplingDriver<'r> {
    rng: &'r mut ChaCha8Rng,
    temperature: f64,
}

impl StepDriver for SamplingDriver<'_> {
    fn pick_coord(&mut self, _step: usize, _axis: usize, row: &[f64]) -> Result<f64> {
        Ok(mol_sample(&MixtureParams::from_row(row), self.rng, self.temperature)?
            .clamp(-1.0, 1.0))
    }

    fn pick_id(&mut self, _step: usize, logits: &[f64]) -> Result<usize> {
        categorical_sample(&CategoricalParams::new(logits.to_vec()), self.rng, self.temperature)
    }
}

/// Incremental pass with cached keys/values; the driver decides each value
/// right after its readout, and the decision is injected before the next
/// layers run.
pub fn run_shape_steps(
    store: &ParamStore,
    c: &GeneratorConfig,
    cond_raw_data: Vec<f64>,
    driver: &mut dyn StepDriver,
) -> Result<Vec<([f64; 3], usize)>> {
    let mut tape = Tape::new();
    let cond_raw = tape.value(vec![1, cond_raw_data.len()], cond_raw_data);
    let mut kv: Vec<BlockKv> = vec![BlockKv::default(); c.shape_layers];
    let mut pairs: Vec<([f64; 3], usize)> = Vec::with_capacity(c.m_anchors);
    let pd = c.anchor_pos_dims;

    for step in 0..c.m_anchors {
        let token = if step == 0 {
            linear(&mut tape, store, "shape.proj", cond_raw)
        } else {
            let (anchor, code) = pairs[step - 1];
            latent_embedding(&mut tape, store, c, &anchor, code)
        };
        let mut h = token;
        let mut layer = 0;
        let mut run_to = |tape: &mut Tape, h: ValueId, depth: usize, kv: &mut Vec<BlockKv>| {
            let mut h = h;
            while layer < depth {
                h = attn_block_step(
                    tape,
                    store,
                    &format!("shape.attn{layer}"),
                    c.shape_spec(),
                    h,
                    &mut kv[layer],
                );
                layer += 1;
            }
            h
        };

        let mut coords = [0.0; 3];
        for (axis, (head_name, inj_name)) in
            [("headx", "injx"), ("heady", "injy"), ("headz", "injz")].iter().enumerate()
        {
            h = run_to(&mut tape, h, c.readout_depths[axis], &mut kv);
            let params = head(&mut tape, store, head_name, h);
            let row = tape.data(params).to_vec();
            coords[axis] = driver.pick_coord(step, axis, &row)?;
            let enc = tape.value(vec![1, pd], value_encoding(coords[axis], pd));
            let inj = linear(&mut tape, store, &format!("shape.{inj_name}"), enc);
            h = tape.add(h, inj);
        }

        h = run_to(&mut tape, h, c.readout_depths[3], &mut kv);
        let id_params = head(&mut tape, store, "headid", h);
        let id_row = tape.data(id_params).to_vec();
        let id = driver.pick_id(step, &id_row)?;
        pairs.push((coords, id));
    }
    tape.ensure_finite()?;
    Ok(pairs)
}

/// Autoregressive sampling of M anchor latents. Coordinates clamp to the
/// canonical cube; the returned set is re-sorted by its constructor.
pub fn sample_anchor_latents(
    store: &ParamStore,
    c: &GeneratorConfig,
    cond_raw_data: Vec<f64>,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AnchorLatentSet> {
    let mut driver = SamplingDriver { rng, temperature };
    let pairs = run_shape_steps(store, c, cond_raw_data, &mut driver)?;
    Ok(AnchorLatentSet::new(pairs))
}
