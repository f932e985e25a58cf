//! Input encoders: floor-mask CNN, bounding-box token, anchor-latent token.

use rand_chacha::ChaCha8Rng;

use super::GeneratorConfig;
use crate::distributions::pos_enc;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor, ValueId};
use crate::scene_model::FloorPlanMask;
use crate::shape_codec::AnchorLatentSet;
use crate::transformer::{init_linear, linear};

/// Attribute/coordinate values get this scale before sinusoidal encoding,
/// matching the codec's convention for unit-range inputs.
pub const ATTR_SCALE: f64 = 100.0;

pub(super) fn init_encoder_params(
    store: &mut ParamStore,
    c: &GeneratorConfig,
    n_categories: usize,
    rng: &mut ChaCha8Rng,
) {
    // Floor CNN: stride-2 valid convolutions, then global average pool and a
    // linear lift to the token width.
    let mut ch_in = 1;
    for (i, &ch_out) in c.floor_channels.iter().enumerate() {
        store.insert(
            &format!("floor.conv{i}.k"),
            Tensor::glorot(vec![ch_out, ch_in, 3, 3], (ch_in * 9, ch_out * 9), rng),
        );
        store.insert(&format!("floor.conv{i}.b"), Tensor::param(vec![ch_out, 1, 1], vec![0.0; ch_out]));
        ch_in = ch_out;
    }
    init_linear(store, "floor.out", ch_in, c.token_width, rng);

    // Category embedding table plus the box-token projection.
    store.insert(
        "box.cat_emb",
        Tensor::glorot(vec![n_categories, c.cat_emb], (n_categories, c.cat_emb), rng),
    );
    let box_in = c.cat_emb + 7 * c.box_pos_dims; // t(3) + r(1) + s(3) scalars
    init_linear(store, "box.proj", box_in, c.box_half(), rng);

    // Anchor encoder: per-anchor row of pos_enc(x,y,z,id) -> scalar, then an
    // optional projection of g when M differs from the anchor-half width.
    let row = 4 * c.anchor_pos_dims;
    init_linear(store, "anchor.mlp1", row, c.anchor_pos_dims * 2, rng);
    init_linear(store, "anchor.mlp2", c.anchor_pos_dims * 2, 1, rng);
    if c.m_anchors != c.box_half() {
        init_linear(store, "anchor.proj", c.m_anchors, c.box_half(), rng);
    }
}

/// Floor mask -> feature with the per-furniture token width.
pub fn encode_floor(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    mask: &FloorPlanMask,
) -> Result<ValueId> {
    let data: Vec<f64> = mask.cells.iter().map(|&v| v as f64).collect();
    let mut x = tape.value(vec![1, mask.h, mask.w], data);
    for i in 0..c.floor_channels.len() {
        let k = tape.param(&format!("floor.conv{i}.k"), store);
        let b = tape.param(&format!("floor.conv{i}.b"), store);
        let conv = tape.conv2d(x, k, 2);
        let biased = tape.add(conv, b);
        x = tape.relu(biased);
    }
    let shape = tape.shape(x).to_vec();
    let (ch, spatial) = (shape[0], shape[1] * shape[2]);
    let flat = tape.reshape(x, vec![ch, spatial]);
    let pooled = tape.mean_axis(flat, 1);
    let row = tape.reshape(pooled, vec![1, ch]);
    Ok(linear(tape, store, "floor.out", row))
}

fn scaled_pos_enc(values: &[f64], dims: usize) -> Vec<f64> {
    let scaled: Vec<f64> = values.iter().map(|v| v * ATTR_SCALE).collect();
    pos_enc(&scaled, dims)
}

/// Box token from normalized attributes: category embedding plus encoded
/// translation/rotation/size, projected to the box half-width.
pub fn encode_box(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    category: usize,
    n_categories: usize,
    t: &[f64; 3],
    r: f64,
    s: &[f64; 3],
) -> Result<ValueId> {
    if category >= n_categories {
        return Err(Error::Contract(format!(
            "category index {category} out of range {n_categories}"
        )));
    }
    let table = tape.param("box.cat_emb", store);
    let emb = tape.embedding(table, &[category]);
    let mut enc = Vec::with_capacity(7 * c.box_pos_dims);
    enc.extend(scaled_pos_enc(t, c.box_pos_dims));
    enc.extend(scaled_pos_enc(&[r], c.box_pos_dims));
    enc.extend(scaled_pos_enc(s, c.box_pos_dims));
    let enc_id = tape.value(vec![1, 7 * c.box_pos_dims], enc);
    let cat = tape.concat(&[emb, enc_id], 1);
    Ok(linear(tape, store, "box.proj", cat))
}

/// Anchor token g: each (x, y, z, id) row is positionally encoded and mapped
/// to one scalar by a shared two-layer MLP; the resulting M-vector is
/// projected to the anchor half-width when the sizes differ.
pub fn encode_anchors(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    latents: &AnchorLatentSet,
) -> Result<ValueId> {
    if latents.len() != c.m_anchors {
        return Err(Error::Contract(format!(
            "anchor set has {} entries, model expects {}",
            latents.len(),
            c.m_anchors
        )));
    }
    let mut rows = Vec::with_capacity(c.m_anchors * 4 * c.anchor_pos_dims);
    for (anchor, code) in latents.pairs() {
        if code >= c.codebook_size {
            return Err(Error::Contract(format!(
                "code {code} out of codebook range {}",
                c.codebook_size
            )));
        }
        rows.extend(scaled_pos_enc(&anchor, c.anchor_pos_dims));
        // The id is an integer index; the raw encoding already separates
        // integers.
        rows.extend(pos_enc(&[code as f64], c.anchor_pos_dims));
    }
    let x = tape.value(vec![c.m_anchors, 4 * c.anchor_pos_dims], rows);
    let h = linear(tape, store, "anchor.mlp1", x);
    let h = tape.relu(h);
    let g = linear(tape, store, "anchor.mlp2", h);
    let g_row = tape.reshape(g, vec![1, c.m_anchors]);
    if c.m_anchors != c.box_half() {
        Ok(linear(tape, store, "anchor.proj", g_row))
    } else {
        Ok(g_row)
    }
}

/// Full per-furniture context token: box half ++ anchor half.
#[allow(clippy::too_many_arguments)]
pub fn furniture_token(
    tape: &mut Tape,
    store: &ParamStore,
    c: &GeneratorConfig,
    category: usize,
    n_categories: usize,
    t: &[f64; 3],
    r: f64,
    s: &[f64; 3],
    latents: &AnchorLatentSet,
) -> Result<ValueId> {
    let box_half = encode_box(tape, store, c, category, n_categories, t, r, s)?;
    let anchor_half = encode_anchors(tape, store, c, latents)?;
    Ok(tape.concat(&[box_half, anchor_half], 1))
}
