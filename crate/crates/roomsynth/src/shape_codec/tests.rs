use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{interp_rows, sample_queries};
use super::*;
use crate::geometry::{make_furniture, occupancy};
use crate::numerics::gradcheck::max_rel_error;
use crate::numerics::Tensor;

fn tiny_config() -> CodecConfig {
    CodecConfig {
        n_surface: 256,
        m_anchors: 16,
        knn: 8,
        codebook_size: 32,
        latent_dim: 16,
        queries_per_step: 128,
        epochs: 200,
        lr: 1e-3,
        commitment_weight: 0.25,
        pos_dims: 8,
        enc_attn_layers: 1,
        dec_attn_layers: 2,
        attn_heads: 4,
        ff_dim: 32,
        ema_decay: 0.99,
        ema_eps: 1e-5,
        dead_code_steps: 50,
        near_surface_noise: 0.05,
        warmup_epochs: 0,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn anchor_latent_set_sorts_ascending() {
    let set = AnchorLatentSet::new(vec![
        ([0.5, 0.0, 0.0], 3),
        ([-0.5, 0.2, 0.0], 7),
        ([0.5, -1.0, 0.0], 1),
        ([-0.5, 0.2, 0.0], 2),
    ]);
    let a = set.anchors();
    for w in a.windows(2) {
        let key = |p: &[f64; 3]| (p[0], p[1], p[2]);
        assert!(key(&w[0]) <= key(&w[1]), "anchors not sorted: {a:?}");
    }
    // Equal coordinates tie-break on the code.
    assert_eq!(set.codes()[0], 2);
    assert_eq!(set.codes()[1], 7);
}

#[test]
fn encode_output_shape_is_m_by_c() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 90);
    let entry = prepare_shape(&make_furniture("chair", 0).unwrap(), &c, 90, 0).unwrap();
    let (anchors, z) = model.encode(&entry.cloud).unwrap();
    assert_eq!(anchors.len(), c.m_anchors);
    assert_eq!(z.len(), c.m_anchors * c.latent_dim);
}

#[test]
fn patch_point_permutation_leaves_latents_unchanged() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 91);
    let entry = prepare_shape(&make_furniture("table", 1).unwrap(), &c, 91, 0).unwrap();

    let run = |patches: &[Vec<[f64; 3]>]| {
        let mut tape = Tape::new();
        let z = encode_patches_on_tape(&mut tape, &model.params, &c, &entry.anchors, patches);
        tape.data(z).to_vec()
    };
    let base = run(&entry.patches);
    let mut permuted = entry.patches.clone();
    permuted[3].reverse();
    permuted[7].rotate_left(2);
    let after = run(&permuted);
    assert_eq!(base, after, "max-pool should erase within-patch order");
}

#[test]
fn encoder_translation_invariant_with_pos_projection_zeroed() {
    let c = tiny_config();
    let mut model = CodecModel::init(c.clone(), 92);
    // Ablate the positional pathway.
    let zero = |t: &mut Tensor| t.data.iter_mut().for_each(|v| *v = 0.0);
    zero(model.params.get_mut("enc.pos.w"));
    zero(model.params.get_mut("enc.pos.b"));

    // Dyadic coordinates and a dyadic shift keep every difference exact.
    let mut r = rng(93);
    let points: Vec<[f64; 3]> = (0..64)
        .map(|_| {
            [
                r.gen_range(-32..32i32) as f64 / 64.0,
                r.gen_range(-32..32i32) as f64 / 64.0,
                r.gen_range(-32..32i32) as f64 / 64.0,
            ]
        })
        .collect();
    let cloud = PointCloud::new(points.clone());
    let shifted = PointCloud::new(points.iter().map(|p| [p[0] + 0.25, p[1] - 0.5, p[2] + 0.25]).collect());

    let (_, z1) = model.encode(&cloud).unwrap();
    let (_, z2) = model.encode(&shifted).unwrap();
    assert_eq!(z1, z2, "encoder not translation invariant once pos_enc is ablated");
}

#[test]
fn quantize_of_exact_codewords_is_identity() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 94);
    let ids_in: Vec<usize> = vec![5, 0, 31, 17];
    let rows = model.codebook.lookup_rows(&ids_in);
    let mut tape = Tape::new();
    let z = tape.value(vec![4, c.latent_dim], rows.clone());
    let (zq, ids) = quantize_on_tape(&mut tape, &model.codebook, z);
    assert_eq!(ids, ids_in);
    assert_eq!(tape.data(zq), rows.as_slice());
}

#[test]
fn interpolation_weight_at_anchor_is_dominant() {
    // Anchors on well-separated lattice corners.
    let anchors: Vec<[f64; 3]> = vec![
        [-0.9, -0.9, -0.9],
        [0.9, -0.9, -0.9],
        [-0.9, 0.9, -0.9],
        [0.9, 0.9, -0.9],
        [-0.9, -0.9, 0.9],
        [0.9, -0.9, 0.9],
        [-0.9, 0.9, 0.9],
        [0.9, 0.9, 0.9],
        [0.0, 0.0, 0.0],
    ];
    let rows = interp_rows(&anchors, &[[0.0, 0.0, 0.0]]);
    let w = rows[0]
        .iter()
        .find(|(i, _)| *i == 8)
        .map(|(_, w)| *w)
        .expect("anchor itself not among neighbors");
    assert!(w >= 1.0 - 1e-6, "anchor weight {w}");
}

#[test]
fn decode_outputs_are_probabilities() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 95);
    let entry = prepare_shape(&make_furniture("lamp", 2).unwrap(), &c, 95, 0).unwrap();
    let latents = model.encode_quantize(&entry.cloud).unwrap();
    let mut r = rng(96);
    let queries: Vec<[f64; 3]> = (0..10_000)
        .map(|_| {
            [
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let probs = model.decode_probs(&latents, &queries).unwrap();
    assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn decode_invariant_under_anchor_token_permutation() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 97);
    let entry = prepare_shape(&make_furniture("sofa", 3).unwrap(), &c, 97, 0).unwrap();
    let (anchors, z) = model.encode(&entry.cloud).unwrap();
    let codes = model.codebook.quantize_rows(&z);

    let queries: Vec<[f64; 3]> = {
        let mut r = rng(98);
        (0..64)
            .map(|_| {
                [
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                ]
            })
            .collect()
    };

    let run = |anchors: &[[f64; 3]], codes: &[usize]| {
        let mut tape = Tape::new();
        let zq_data = model.codebook.lookup_rows(codes);
        let zq = tape.value(vec![codes.len(), c.latent_dim], zq_data);
        let probs = decode_on_tape(&mut tape, &model.params, &c, zq, anchors, &queries);
        tape.data(probs).to_vec()
    };
    let base = run(&anchors, &codes);

    // Permute tokens (anchors and codes together).
    let mut idx: Vec<usize> = (0..anchors.len()).collect();
    let mut r = rng(99);
    for i in (1..idx.len()).rev() {
        idx.swap(i, r.gen_range(0..=i));
    }
    let p_anchors: Vec<[f64; 3]> = idx.iter().map(|&i| anchors[i]).collect();
    let p_codes: Vec<usize> = idx.iter().map(|&i| codes[i]).collect();
    let permuted = run(&p_anchors, &p_codes);

    for (a, b) in base.iter().zip(&permuted) {
        assert!((a - b).abs() < 1e-9, "decode changed under token permutation: {a} vs {b}");
    }
}

#[test]
fn constant_half_prediction_gives_ln2_bce() {
    let c = tiny_config();
    let mut model = CodecModel::init(c.clone(), 100);
    // Zero the last occupancy layer: logits 0, probabilities exactly 0.5.
    model.params.get_mut("dec.occ3.w").data.iter_mut().for_each(|v| *v = 0.0);
    model.params.get_mut("dec.occ3.b").data.iter_mut().for_each(|v| *v = 0.0);

    let solid = make_furniture("bed", 4).unwrap();
    let entry = prepare_shape(&solid, &c, 100, 0).unwrap();
    let mut tape = Tape::new();
    let mut r = rng(101);
    let (_, parts, _, _) = codec_loss_on_tape(
        &mut tape,
        &model.params,
        &model.codebook,
        &c,
        &entry.solid,
        &entry.cloud,
        &entry.anchors,
        &entry.patches,
        true,
        &mut r,
    )
    .unwrap();
    assert!((parts.occupancy - std::f64::consts::LN_2).abs() < 1e-12);
}

fn micro_config() -> CodecConfig {
    CodecConfig {
        n_surface: 64,
        m_anchors: 4,
        knn: 4,
        codebook_size: 8,
        latent_dim: 4,
        queries_per_step: 16,
        epochs: 1,
        lr: 1e-3,
        commitment_weight: 0.25,
        pos_dims: 4,
        enc_attn_layers: 1,
        dec_attn_layers: 1,
        attn_heads: 2,
        ff_dim: 8,
        ema_decay: 0.99,
        ema_eps: 1e-5,
        dead_code_steps: 50,
        near_surface_noise: 0.05,
        warmup_epochs: 0,
    }
}

/// Finite differences cannot see through the straight-through estimator
/// (the quantizer's true local derivative is zero), so the composite loss is
/// checked in two exact halves: the full differentiable pipeline with the
/// quantizer bypassed, and the shipped loss with encoder parameters frozen.
#[test]
fn codec_loss_gradient_matches_finite_differences() {
    let c = micro_config();
    let mut model = CodecModel::init(c.clone(), 102);
    // Jitter every parameter off exact zeros: patch rows for the anchor
    // itself are zero vectors, and zero-initialized biases would put the
    // finite-difference evaluation point exactly on the relu kink.
    {
        let mut r = rng(202);
        for (_, t) in model.params.iter_mut() {
            for v in &mut t.data {
                *v += r.gen_range(0.01..0.03);
            }
        }
    }
    let entry = prepare_shape(&make_furniture("chair", 5).unwrap(), &c, 102, 0).unwrap();
    let queries = {
        let mut r = rng(103);
        sample_queries(&entry.cloud, c.queries_per_step, c.near_surface_noise, &mut r)
    };
    let targets: Vec<f64> = queries.iter().map(|p| occupancy(&entry.solid, p)).collect();

    // Half one: quantizer bypassed, every parameter checked. The commitment
    // target is frozen from the unperturbed forward pass; recomputing the
    // nearest codeword per finite-difference sample would let assignment
    // flips poison the derivative.
    let zq_frozen = {
        let mut tape = Tape::new();
        let z = encode_patches_on_tape(&mut tape, &model.params, &c, &entry.anchors, &entry.patches);
        let ids = model.codebook.quantize_rows(tape.data(z));
        model.codebook.lookup_rows(&ids)
    };
    let c1 = c.clone();
    let e1 = entry.clone();
    let q1 = queries.clone();
    let t1 = targets.clone();
    let err = max_rel_error(
        &model.params,
        move |tape, store| {
            let z = encode_patches_on_tape(tape, store, &c1, &e1.anchors, &e1.patches);
            let probs = decode_on_tape(tape, store, &c1, z, &e1.anchors, &q1);
            let target_id = tape.value(vec![t1.len()], t1.clone());
            let l_occ = tape.bce(probs, target_id);
            let zq_const = tape.value(tape.shape(z).to_vec(), zq_frozen.clone());
            let diff = tape.sub(zq_const, z);
            let sq = tape.mul(diff, diff);
            let sum = tape.sum(sq);
            let l_commit = tape.scale(sum, 1.0 / e1.anchors.len() as f64);
            let weighted = tape.scale(l_commit, c1.commitment_weight);
            tape.add(l_occ, weighted)
        },
        1e-5,
    );
    assert!(err < 1e-4, "bypassed-quantizer codec loss gradient mismatch: {err}");

    // Half two: shipped loss (straight-through included), decoder-side
    // parameters only.
    let mut frozen = model.params.clone();
    for (name, t) in frozen.iter_mut() {
        if name.starts_with("enc.") {
            t.requires_grad = false;
        }
    }
    let c2 = c.clone();
    let e2 = entry;
    let cb2 = model.codebook.clone();
    let err = max_rel_error(
        &frozen,
        move |tape, store| {
            let z = encode_patches_on_tape(tape, store, &c2, &e2.anchors, &e2.patches);
            let (zq, _) = quantize_on_tape(tape, &cb2, z);
            let probs = decode_on_tape(tape, store, &c2, zq, &e2.anchors, &queries);
            let target_id = tape.value(vec![targets.len()], targets.clone());
            tape.bce(probs, target_id)
        },
        1e-5,
    );
    assert!(err < 1e-4, "decoder-side codec loss gradient mismatch: {err}");
}

#[test]
fn smoke_training_halves_occupancy_loss() {
    let mut c = tiny_config();
    c.epochs = 200;
    c.lr = 5e-3;
    let corpus = vec![make_furniture("table", 6).unwrap()];
    let (model, rows) = train_codec(&corpus, &c, 104, TrainOptions::default()).unwrap();
    assert_eq!(rows.len(), 200);
    let first = rows[0].occupancy;
    let last = rows.last().unwrap().occupancy;
    assert!(
        last <= 0.5 * first,
        "occupancy loss did not halve: {first} -> {last}"
    );
    let total: f64 = model.codebook.cluster_sizes().iter().sum();
    assert!((total - c.m_anchors as f64).abs() < 1e-6);
}

#[test]
fn training_is_deterministic_per_seed() {
    let mut c = tiny_config();
    c.epochs = 5;
    let corpus = vec![
        make_furniture("chair", 7).unwrap(),
        make_furniture("lamp", 8).unwrap(),
    ];
    let run = || {
        let (model, _) = train_codec(&corpus, &c, 105, TrainOptions::default()).unwrap();
        model
            .params
            .iter()
            .flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut c = tiny_config();
    let corpus = vec![
        make_furniture("nightstand", 9).unwrap(),
        make_furniture("shelf", 10).unwrap(),
    ];
    let dir = std::env::temp_dir().join(format!("roomsynth_codec_resume_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    // Uninterrupted: 6 epochs.
    c.epochs = 6;
    let (full, full_rows) = train_codec(&corpus, &c, 106, TrainOptions::default()).unwrap();

    // Same run interrupted after 3 epochs, then resumed to completion.
    let ckpt = dir.join("codec.rdck");
    train_codec(
        &corpus,
        &c,
        106,
        TrainOptions { checkpoint: Some(&ckpt), resume: false, stop_after_epochs: Some(3) },
    )
    .unwrap();
    let (resumed, resumed_rows) = train_codec(
        &corpus,
        &c,
        106,
        TrainOptions { checkpoint: Some(&ckpt), resume: true, stop_after_epochs: None },
    )
    .unwrap();

    let bits = |m: &CodecModel| {
        m.params
            .iter()
            .flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits()))
            .collect::<Vec<u64>>()
    };
    assert_eq!(bits(&full), bits(&resumed), "resumed parameters diverge");
    // The resumed run's rows must equal the tail of the uninterrupted run.
    assert_eq!(&full_rows[6..], &resumed_rows[..], "resumed losses diverge");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_round_trips_model() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 107);
    let path = std::env::temp_dir().join(format!("roomsynth_codec_{}.rdck", std::process::id()));
    model.save(&path, None, 0).unwrap();
    let (back, _, _) = CodecModel::load(&path, c).unwrap();
    for (name, t) in model.params.iter() {
        assert_eq!(t.data, back.params.get(name).data, "param {name} drifted");
    }
    assert_eq!(model.codebook, back.codebook);
    std::fs::remove_file(&path).ok();
    std::fs::remove_file(manifest_path(&path)).ok();
}

#[test]
fn reconstruct_grid_bounds_and_determinism() {
    let c = tiny_config();
    let model = CodecModel::init(c.clone(), 108);
    let entry = prepare_shape(&make_furniture("wardrobe", 11).unwrap(), &c, 108, 0).unwrap();
    let latents = model.encode_quantize(&entry.cloud).unwrap();
    assert!(model.reconstruct_grid(&latents, 4).is_err());
    let g1 = model.reconstruct_grid(&latents, 16).unwrap();
    let g2 = model.reconstruct_grid(&latents, 16).unwrap();
    assert_eq!(g1, g2);
    assert!(g1.values.iter().all(|&v| v > 0.0 && v < 1.0));
}
