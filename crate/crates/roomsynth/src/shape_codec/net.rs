//! Codec networks on the tape: patch encoder with max-pool, latent
//! self-attention, quantization with the straight-through estimator, and the
//! occupancy decoder with inverse-squared-distance interpolation over the
//! eight nearest anchors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::codebook::Codebook;
use super::CodecConfig;
use crate::distributions::pos_enc;
use crate::error::Result;
use crate::geometry::{occupancy, FurnitureSolid, PointCloud};
use crate::numerics::{ParamStore, Tape, ValueId};
use crate::transformer::{attn_block, init_attn_block, init_linear, linear, AttnSpec};

const INTERP_NEIGHBORS: usize = 8;
const INTERP_EPS: f64 = 1e-8;
/// Coordinates in [-1,1] are multiplied by this before sinusoidal encoding;
/// the raw encoding's frequencies top out at 1 and cannot resolve surface
/// detail on unit-range inputs.
pub const COORD_SCALE: f64 = 100.0;

fn enc_spec(c: &CodecConfig) -> AttnSpec {
    AttnSpec { dim: c.latent_dim, heads: c.attn_heads, ff: c.ff_dim }
}

pub fn init_params(c: &CodecConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    let cd = c.latent_dim;
    init_linear(&mut store, "enc.patch1", 3, cd, rng);
    init_linear(&mut store, "enc.patch2", cd, cd, rng);
    init_linear(&mut store, "enc.pos", 3 * c.pos_dims, cd, rng);
    for i in 0..c.enc_attn_layers {
        init_attn_block(&mut store, &format!("enc.attn{i}"), enc_spec(c), rng);
    }
    init_linear(&mut store, "dec.pos", 3 * c.pos_dims, cd, rng);
    for i in 0..c.dec_attn_layers {
        init_attn_block(&mut store, &format!("dec.attn{i}"), enc_spec(c), rng);
    }
    // The occupancy head also sees the query's own encoded position; the
    // interpolated feature alone cannot localize the surface at this scale.
    init_linear(&mut store, "dec.occ1", cd + 3 * c.pos_dims, cd, rng);
    init_linear(&mut store, "dec.occ2", cd, cd, rng);
    init_linear(&mut store, "dec.occ3", cd, 1, rng);
    store
}

fn anchor_pos_const(tape: &mut Tape, anchors: &[[f64; 3]], pos_dims: usize) -> ValueId {
    let mut data = Vec::with_capacity(anchors.len() * 3 * pos_dims);
    for a in anchors {
        let scaled = [a[0] * COORD_SCALE, a[1] * COORD_SCALE, a[2] * COORD_SCALE];
        data.extend(pos_enc(&scaled, pos_dims));
    }
    tape.value(vec![anchors.len(), 3 * pos_dims], data)
}

/// Encoder over precomputed anchors/patches: shared patch MLP, max-pool over
/// the k patch points, anchor positional projection added, then
/// self-attention over the M tokens.
pub fn encode_patches_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    c: &CodecConfig,
    anchors: &[[f64; 3]],
    patches: &[Vec<[f64; 3]>],
) -> ValueId {
    let m = anchors.len();
    let k = patches[0].len();
    assert!(patches.iter().all(|p| p.len() == k), "ragged patches");
    let mut flat = Vec::with_capacity(m * k * 3);
    for patch in patches {
        for p in patch {
            flat.extend_from_slice(p);
        }
    }
    let x = tape.value(vec![m * k, 3], flat);
    let h = linear(tape, store, "enc.patch1", x);
    let h = tape.relu(h);
    let h = linear(tape, store, "enc.patch2", h);
    let h = tape.reshape(h, vec![m, k, c.latent_dim]);
    let pooled = tape.max_pool(h, 1);

    let pos = anchor_pos_const(tape, anchors, c.pos_dims);
    let posp = linear(tape, store, "enc.pos", pos);
    let mut tokens = tape.add(pooled, posp);
    for i in 0..c.enc_attn_layers {
        tokens = attn_block(tape, store, &format!("enc.attn{i}"), enc_spec(c), tokens, None);
    }
    tokens
}

/// Full encoder from a raw surface cloud (FPS + kNN inside).
pub fn encode_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    c: &CodecConfig,
    cloud: &PointCloud,
) -> Result<(Vec<[f64; 3]>, ValueId)> {
    let (anchors, patches) = super::anchors_and_patches(cloud, c.m_anchors, c.knn)?;
    let z = encode_patches_on_tape(tape, store, c, &anchors, &patches);
    Ok((anchors, z))
}

/// Nearest-codeword assignment with straight-through backward.
pub fn quantize_on_tape(
    tape: &mut Tape,
    codebook: &Codebook,
    z: ValueId,
) -> (ValueId, Vec<usize>) {
    let rows = tape.data(z).to_vec();
    let ids = codebook.quantize_rows(&rows);
    let replacement = codebook.lookup_rows(&ids);
    let zq = tape.straight_through(z, replacement);
    (zq, ids)
}

/// Inverse-squared-distance weights over the 8 nearest anchors per query.
pub fn interp_rows(anchors: &[[f64; 3]], queries: &[[f64; 3]]) -> Vec<Vec<(usize, f64)>> {
    let nn = INTERP_NEIGHBORS.min(anchors.len());
    queries
        .iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = anchors
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let dx = a[0] - q[0];
                    let dy = a[1] - q[1];
                    let dz = a[2] - q[2];
                    (dx * dx + dy * dy + dz * dz, i)
                })
                .collect();
            d.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
            let picked = &d[..nn];
            let weights: Vec<f64> = picked.iter().map(|&(d2, _)| 1.0 / (d2 + INTERP_EPS)).collect();
            let total: f64 = weights.iter().sum();
            picked
                .iter()
                .zip(&weights)
                .map(|(&(_, i), &w)| (i, w / total))
                .collect()
        })
        .collect()
}

/// Decoder: anchor tokens through self-attention, interpolated per query,
/// then a 3-layer MLP with sigmoid output.
pub fn decode_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    c: &CodecConfig,
    zq: ValueId,
    anchors: &[[f64; 3]],
    queries: &[[f64; 3]],
) -> ValueId {
    let pos = anchor_pos_const(tape, anchors, c.pos_dims);
    let posp = linear(tape, store, "dec.pos", pos);
    let mut tokens = tape.add(zq, posp);
    for i in 0..c.dec_attn_layers {
        tokens = attn_block(tape, store, &format!("dec.attn{i}"), enc_spec(c), tokens, None);
    }
    let rows = interp_rows(anchors, queries);
    let zv = tape.lin_comb(tokens, rows);
    let qpos = anchor_pos_const(tape, queries, c.pos_dims);
    let zv = tape.concat(&[zv, qpos], 1);
    let h = linear(tape, store, "dec.occ1", zv);
    let h = tape.relu(h);
    let h = linear(tape, store, "dec.occ2", h);
    let h = tape.relu(h);
    let logits = linear(tape, store, "dec.occ3", h);
    let probs = tape.sigmoid(logits);
    let q = queries.len();
    tape.reshape(probs, vec![q])
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub occupancy: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Query batch for one shape: half uniform in [-1,1]^3, half surface samples
/// perturbed with Gaussian noise.
pub fn sample_queries(
    cloud: &PointCloud,
    q: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let mut queries = Vec::with_capacity(q);
    let uniform = q / 2;
    for _ in 0..uniform {
        queries.push([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]);
    }
    for _ in uniform..q {
        let p = cloud.points[rng.gen_range(0..cloud.len())];
        queries.push([
            p[0] + gauss(rng) * noise,
            p[1] + gauss(rng) * noise,
            p[2] + gauss(rng) * noise,
        ]);
    }
    queries
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// BCE + commitment loss for one shape. Returns the scalar loss node, the
/// loss parts, the raw encoder rows, and their codebook assignments (the
/// latter two feed the EMA update). With `use_vq` off (warm-up), the decoder
/// consumes raw latents, the commitment term is skipped, and no assignments
/// are returned.
#[allow(clippy::too_many_arguments)]
pub fn codec_loss_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    codebook: &Codebook,
    c: &CodecConfig,
    solid: &FurnitureSolid,
    cloud: &PointCloud,
    anchors: &[[f64; 3]],
    patches: &[Vec<[f64; 3]>],
    use_vq: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(ValueId, LossParts, Vec<f64>, Vec<usize>)> {
    let z = encode_patches_on_tape(tape, store, c, anchors, patches);
    let z_rows = tape.data(z).to_vec();
    let (tokens, ids) = if use_vq {
        quantize_on_tape(tape, codebook, z)
    } else {
        (z, Vec::new())
    };

    let queries = sample_queries(cloud, c.queries_per_step, c.near_surface_noise, rng);
    let targets: Vec<f64> = queries.iter().map(|p| occupancy(solid, p)).collect();
    let probs = decode_on_tape(tape, store, c, tokens, anchors, &queries);
    let target_id = tape.value(vec![queries.len()], targets);
    let l_occ = tape.bce(probs, target_id);

    let total = if use_vq {
        // ||sg(z_hat) - z||^2 averaged over anchors.
        let zq_const = {
            let data = tape.data(tokens).to_vec();
            let shape = tape.shape(tokens).to_vec();
            tape.value(shape, data)
        };
        let diff = tape.sub(zq_const, z);
        let sq = tape.mul(diff, diff);
        let sum = tape.sum(sq);
        let l_commit = tape.scale(sum, 1.0 / anchors.len() as f64);
        let weighted = tape.scale(l_commit, c.commitment_weight);
        let total = tape.add(l_occ, weighted);
        tape.ensure_finite()?;
        let parts = LossParts {
            occupancy: tape.data(l_occ)[0],
            commitment: tape.data(l_commit)[0],
            total: tape.data(total)[0],
        };
        return Ok((total, parts, z_rows, ids));
    } else {
        l_occ
    };
    tape.ensure_finite()?;
    let parts = LossParts {
        occupancy: tape.data(l_occ)[0],
        commitment: 0.0,
        total: tape.data(total)[0],
    };
    Ok((total, parts, z_rows, ids))
}
