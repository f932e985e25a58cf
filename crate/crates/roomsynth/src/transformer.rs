//! Multi-head attention blocks on the tape, shared by the shape codec and
//! the scene/shape generators. Pre-LN residual layout; no positional
//! encoding anywhere — order information, where wanted, enters through the
//! token contents.
//!
//! Two evaluation paths exist: the full-sequence path (optionally causal via
//! an additive mask) and an incremental per-token path with cached K/V for
//! autoregressive sampling. Masked slots add -1e30 to their scores, which
//! underflows to an exact zero attention weight, so both paths produce
//! bit-identical results.

use rand_chacha::ChaCha8Rng;

use crate::numerics::{ParamStore, Tape, Tensor, ValueId};

pub const MASK_OFF: f64 = -1e30;

/// Attention block geometry; `dim` must equal `heads * head_dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnSpec {
    pub dim: usize,
    pub heads: usize,
    pub ff: usize,
}

impl AttnSpec {
    pub fn head_dim(&self) -> usize {
        assert_eq!(self.dim % self.heads, 0, "dim {} not divisible by heads {}", self.dim, self.heads);
        self.dim / self.heads
    }
}

pub fn init_linear(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) {
    store.insert(&format!("{name}.w"), Tensor::glorot(vec![din, dout], (din, dout), rng));
    store.insert(&format!("{name}.b"), Tensor::param(vec![1, dout], vec![0.0; dout]));
}

pub fn linear(tape: &mut Tape, store: &ParamStore, name: &str, x: ValueId) -> ValueId {
    let w = tape.param(&format!("{name}.w"), store);
    let b = tape.param(&format!("{name}.b"), store);
    let xw = tape.matmul(x, w);
    tape.add(xw, b)
}

fn init_layer_norm(store: &mut ParamStore, name: &str, dim: usize) {
    store.insert(&format!("{name}.g"), Tensor::param(vec![dim], vec![1.0; dim]));
    store.insert(&format!("{name}.b"), Tensor::param(vec![dim], vec![0.0; dim]));
}

fn layer_norm(tape: &mut Tape, store: &ParamStore, name: &str, x: ValueId) -> ValueId {
    let g = tape.param(&format!("{name}.g"), store);
    let b = tape.param(&format!("{name}.b"), store);
    tape.layer_norm(x, g, b)
}

pub fn init_attn_block(store: &mut ParamStore, prefix: &str, spec: AttnSpec, rng: &mut ChaCha8Rng) {
    init_layer_norm(store, &format!("{prefix}.ln1"), spec.dim);
    init_linear(store, &format!("{prefix}.q"), spec.dim, spec.dim, rng);
    init_linear(store, &format!("{prefix}.k"), spec.dim, spec.dim, rng);
    init_linear(store, &format!("{prefix}.v"), spec.dim, spec.dim, rng);
    init_linear(store, &format!("{prefix}.o"), spec.dim, spec.dim, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), spec.dim);
    init_linear(store, &format!("{prefix}.ff1"), spec.dim, spec.ff, rng);
    init_linear(store, &format!("{prefix}.ff2"), spec.ff, spec.dim, rng);
}

/// Additive causal mask for an n-token sequence.
pub fn causal_mask(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            m[i * n + j] = MASK_OFF;
        }
    }
    m
}

fn attention(
    tape: &mut Tape,
    spec: AttnSpec,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    mask: Option<ValueId>,
) -> ValueId {
    let hd = spec.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let qh = tape.slice(q, 1, h * hd, hd);
        let kh = tape.slice(k, 1, h * hd, hd);
        let vh = tape.slice(v, 1, h * hd, hd);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let mut scores = tape.scale(scores, scale);
        if let Some(m) = mask {
            scores = tape.add(scores, m);
        }
        let attn = tape.softmax(scores);
        heads.push(tape.matmul(attn, vh));
    }
    tape.concat(&heads, 1)
}

/// Full-sequence pre-LN block: x + MHA(LN(x)), then h + FF(LN(h)).
pub fn attn_block(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    spec: AttnSpec,
    x: ValueId,
    mask: Option<ValueId>,
) -> ValueId {
    let ln1 = layer_norm(tape, store, &format!("{prefix}.ln1"), x);
    let q = linear(tape, store, &format!("{prefix}.q"), ln1);
    let k = linear(tape, store, &format!("{prefix}.k"), ln1);
    let v = linear(tape, store, &format!("{prefix}.v"), ln1);
    let mixed = attention(tape, spec, q, k, v, mask);
    let proj = linear(tape, store, &format!("{prefix}.o"), mixed);
    let h = tape.add(x, proj);
    let ln2 = layer_norm(tape, store, &format!("{prefix}.ln2"), h);
    let f1 = linear(tape, store, &format!("{prefix}.ff1"), ln2);
    let f1 = tape.relu(f1);
    let f2 = linear(tape, store, &format!("{prefix}.ff2"), f1);
    tape.add(h, f2)
}

/// Cached keys/values of one block for incremental decoding.
#[derive(Default, Clone, Copy)]
pub struct BlockKv {
    k: Option<ValueId>,
    v: Option<ValueId>,
}

/// One new token through a block, attending over all cached positions plus
/// itself. Equivalent to the causal full-sequence path at the last row.
pub fn attn_block_step(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    spec: AttnSpec,
    x_new: ValueId,
    kv: &mut BlockKv,
) -> ValueId {
    assert_eq!(tape.shape(x_new), &[1, spec.dim], "step input must be [1, dim]");
    let ln1 = layer_norm(tape, store, &format!("{prefix}.ln1"), x_new);
    let q = linear(tape, store, &format!("{prefix}.q"), ln1);
    let k_new = linear(tape, store, &format!("{prefix}.k"), ln1);
    let v_new = linear(tape, store, &format!("{prefix}.v"), ln1);
    let k = match kv.k {
        Some(old) => tape.concat(&[old, k_new], 0),
        None => k_new,
    };
    let v = match kv.v {
        Some(old) => tape.concat(&[old, v_new], 0),
        None => v_new,
    };
    kv.k = Some(k);
    kv.v = Some(v);
    let mixed = attention(tape, spec, q, k, v, None);
    let proj = linear(tape, store, &format!("{prefix}.o"), mixed);
    let h = tape.add(x_new, proj);
    let ln2 = layer_norm(tape, store, &format!("{prefix}.ln2"), h);
    let f1 = linear(tape, store, &format!("{prefix}.ff1"), ln2);
    let f1 = tape.relu(f1);
    let f2 = linear(tape, store, &format!("{prefix}.ff2"), f1);
    tape.add(h, f2)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    fn spec() -> AttnSpec {
        AttnSpec { dim: 16, heads: 4, ff: 32 }
    }

    fn init_store(seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_attn_block(&mut store, "blk", spec(), &mut rng);
        store
    }

    fn rand_rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn unmasked_block_is_permutation_equivariant() {
        let store = init_store(70);
        let n = 6;
        let rows = rand_rows(n, 16, 71);

        let mut tape = Tape::new();
        let x = tape.value(vec![n, 16], rows.clone());
        let out = attn_block(&mut tape, &store, "blk", spec(), x, None);
        let base = tape.data(out).to_vec();

        // Reverse the rows; outputs must be the same rows reversed.
        let mut rev = Vec::new();
        for i in (0..n).rev() {
            rev.extend_from_slice(&rows[i * 16..(i + 1) * 16]);
        }
        let mut tape2 = Tape::new();
        let x2 = tape2.value(vec![n, 16], rev);
        let out2 = attn_block(&mut tape2, &store, "blk", spec(), x2, None);
        let permuted = tape2.data(out2);
        for i in 0..n {
            for j in 0..16 {
                let a = base[i * 16 + j];
                let b = permuted[(n - 1 - i) * 16 + j];
                assert!((a - b).abs() < 1e-9, "row {i} dim {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn masked_slots_get_zero_attention_weight() {
        // A fully ignored token must not influence any other output row.
        let store = init_store(72);
        let n = 5;
        let mut rows = rand_rows(n, 16, 73);

        // Mask that hides token n-1 from everyone (including itself seeing others is fine).
        let mut mask = vec![0.0; n * n];
        for i in 0..n {
            mask[i * n + (n - 1)] = MASK_OFF;
        }
        let run = |rows: &Vec<f64>| {
            let mut tape = Tape::new();
            let x = tape.value(vec![n, 16], rows.clone());
            let m = tape.value(vec![n, n], mask.clone());
            let out = attn_block(&mut tape, &store, "blk", spec(), x, Some(m));
            tape.data(out)[..(n - 1) * 16].to_vec()
        };
        let base = run(&rows);
        // Scramble the hidden token's content.
        for v in &mut rows[(n - 1) * 16..] {
            *v += 17.0;
        }
        let scrambled = run(&rows);
        assert_eq!(base, scrambled, "padded slot leaked attention weight");
    }

    #[test]
    fn incremental_path_matches_causal_batch_path() {
        let store = init_store(74);
        let n = 7;
        let rows = rand_rows(n, 16, 75);

        let mut tape = Tape::new();
        let x = tape.value(vec![n, 16], rows.clone());
        let mask = tape.value(vec![n, n], causal_mask(n));
        let full = attn_block(&mut tape, &store, "blk", spec(), x, Some(mask));
        let batch_out = tape.data(full).to_vec();

        let mut tape2 = Tape::new();
        let mut kv = BlockKv::default();
        let mut inc_out = Vec::new();
        for i in 0..n {
            let xi = tape2.value(vec![1, 16], rows[i * 16..(i + 1) * 16].to_vec());
            let o = attn_block_step(&mut tape2, &store, "blk", spec(), xi, &mut kv);
            inc_out.extend_from_slice(tape2.data(o));
        }
        assert_eq!(batch_out, inc_out, "incremental and causal batch paths diverge");
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let store = init_store(76);
        let rows = rand_rows(4, 16, 77);
        let err = crate::numerics::gradcheck::max_rel_error(
            &store,
            |tape, store| {
                let x = tape.value(vec![4, 16], rows.clone());
                let out = attn_block(tape, store, "blk", spec(), x, None);
                tape.sum(out)
            },
            1e-5,
        );
        assert!(err < 1e-4, "attention block gradient mismatch: {err}");
    }
}
