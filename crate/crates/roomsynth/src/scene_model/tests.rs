use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::obbs_collide;
use crate::shape_codec::{AnchorLatentSet, CodecConfig, CodecModel};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_codec() -> CodecModel {
    let c = CodecConfig {
        n_surface: 256,
        m_anchors: 16,
        knn: 8,
        codebook_size: 32,
        latent_dim: 16,
        queries_per_step: 64,
        epochs: 1,
        lr: 1e-3,
        commitment_weight: 0.25,
        pos_dims: 8,
        enc_attn_layers: 1,
        dec_attn_layers: 1,
        attn_heads: 4,
        ff_dim: 32,
        ema_decay: 0.99,
        ema_eps: 1e-5,
        dead_code_steps: 50,
        near_surface_noise: 0.05,
        warmup_epochs: 0,
    };
    CodecModel::init(c, 300)
}

fn sample_scene(seed: u64) -> Scene {
    let model = tiny_codec();
    let mut codec = SceneCodec::new(&model);
    let spec = CorpusSpec::default();
    let mut r = rng(seed);
    loop {
        match generate_procedural_scene(&spec, &mut codec, &mut r) {
            Ok(s) => return s,
            Err(Error::Generation(_)) => continue,
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
}

#[test]
fn category_table_shape() {
    let t = CategoryTable::desk();
    assert_eq!(t.len(), 10);
    assert_eq!(t.label(t.end_index()), END_LABEL);
    assert_eq!(t.content_indices().len(), 8);
    assert!(CategoryTable::from_labels(vec!["a".to_string()]).is_err());
}

#[test]
fn authored_scenes_have_no_obb_collisions() {
    for seed in [1u64, 2, 3] {
        let scene = sample_scene(seed);
        let obbs: Vec<_> = scene.furniture.iter().map(|f| f.obb()).collect();
        for i in 0..obbs.len() {
            for j in i + 1..obbs.len() {
                assert!(
                    !obbs_collide(&obbs[i], &obbs[j], 1e-6),
                    "seed {seed}: objects {i} and {j} collide"
                );
            }
        }
        scene.validate(3, 13).unwrap();
    }
}

#[test]
fn chairs_within_a_scene_share_identical_latents() {
    let scene = sample_scene(4);
    let chairs: Vec<_> = scene.furniture.iter().filter(|f| f.category == "chair").collect();
    assert!(chairs.len() >= 2, "scene should seat at least two chairs");
    for pair in chairs.windows(2) {
        assert_eq!(pair[0].shape, pair[1].shape, "chair styles diverged within a scene");
    }
}

#[test]
fn corpus_marginals_match_spec_quotas() {
    let model = tiny_codec();
    let mut codec = SceneCodec::new(&model);
    let spec = CorpusSpec::default();
    let scenes = generate_corpus(&spec, &mut codec, 400, 5).unwrap();
    assert_eq!(scenes.len(), 400);
    let mut counts: std::collections::HashMap<&str, usize> = Default::default();
    let mut total = 0usize;
    for scene in &scenes {
        for inst in &scene.furniture {
            *counts.entry(Box::leak(inst.category.clone().into_boxed_str())).or_default() += 1;
            total += 1;
        }
    }
    let mut report = String::new();
    for (cat, quota) in spec.expected_quotas() {
        let f = *counts.get(cat.as_str()).unwrap_or(&0) as f64 / total as f64;
        report.push_str(&format!("{cat}: marginal {f:.3} vs quota {quota:.3}\n"));
    }
    for (cat, quota) in spec.expected_quotas() {
        let f = *counts.get(cat.as_str()).unwrap_or(&0) as f64 / total as f64;
        assert!((f - quota).abs() < 0.03, "{report}");
    }
}

#[test]
fn permutation_preserves_multiset_and_covers_orders() {
    let scene = sample_scene(6);
    let mut r = rng(7);
    let permuted = permute_objects(&scene, &mut r);
    let key = |f: &FurnitureInstance| (f.category.clone(), f.translation.map(|v| v.to_bits()));
    let mut a: Vec<_> = scene.furniture.iter().map(key).collect();
    let mut b: Vec<_> = permuted.furniture.iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b, "permutation changed the furniture multiset");

    // A single-object scene is a fixed point.
    let mut single = scene.clone();
    single.furniture.truncate(1);
    let p = permute_objects(&single, &mut r);
    assert_eq!(p.furniture, single.furniture);

    // Three objects: all six orders near-uniform over 10^4 draws.
    let mut three = scene.clone();
    three.furniture.truncate(3);
    let mut freq: std::collections::HashMap<Vec<u64>, usize> = Default::default();
    for _ in 0..10_000 {
        let p = permute_objects(&three, &mut r);
        let sig: Vec<u64> = p.furniture.iter().map(|f| f.translation[0].to_bits()).collect();
        *freq.entry(sig).or_default() += 1;
    }
    assert_eq!(freq.len(), 6);
    for (_, c) in freq {
        let f = c as f64 / 10_000.0;
        assert!((f - 1.0 / 6.0).abs() < 0.03, "order frequency {f}");
    }
}

#[test]
fn normalization_round_trips() {
    let scenes = vec![sample_scene(8), sample_scene(9)];
    let stats = CorpusStats::from_scenes(&scenes).unwrap();

    // Brute-force rescan must agree.
    let mut t_min = [f64::INFINITY; 3];
    let mut t_max = [f64::NEG_INFINITY; 3];
    for scene in &scenes {
        for inst in &scene.furniture {
            for i in 0..3 {
                t_min[i] = t_min[i].min(inst.translation[i]);
                t_max[i] = t_max[i].max(inst.translation[i]);
            }
        }
    }
    assert_eq!(stats.t_min, t_min);
    assert_eq!(stats.t_max, t_max);

    for scene in &scenes {
        for inst in &scene.furniture {
            let (t, s, r) = normalize_instance(inst, &stats);
            assert!(t.iter().chain(s.iter()).all(|v| (-1.0..=1.0).contains(v)));
            let (dt, ds, dr) = denormalize_instance(&t, &s, r, &stats);
            for i in 0..3 {
                assert!((dt[i] - inst.translation[i]).abs() < 1e-12);
                assert!((ds[i] - inst.size[i]).abs() < 1e-12);
            }
            assert!((dr - inst.yaw).abs() < 1e-12);
        }
    }

    // Extremes map to exactly -1 / +1.
    let mut probe = scenes[0].furniture[0].clone();
    probe.translation = stats.t_min;
    let (t, _, _) = normalize_instance(&probe, &stats);
    assert_eq!(t, [-1.0, -1.0, -1.0]);
    probe.translation = stats.t_max;
    let (t, _, _) = normalize_instance(&probe, &stats);
    assert_eq!(t, [1.0, 1.0, 1.0]);
}

#[test]
fn scene_json_round_trip_and_determinism() {
    let scene = sample_scene(10);
    let text = scene_to_json(&scene);
    let back = scene_from_json(&text).unwrap();
    assert_eq!(scene, back);
    assert_eq!(scene_to_json(&back), text, "re-serialization is not byte-identical");
}

#[test]
fn scene_json_missing_category_names_the_path() {
    let scene = sample_scene(11);
    let text = scene_to_json(&scene);
    // Drop the first furniture category key.
    let broken = text.replacen("\"category\"", "\"categoria\"", 1);
    match scene_from_json(&broken) {
        Err(Error::Data(msg)) => {
            assert!(
                msg.contains("furniture[0]"),
                "error should cite furniture[0]: {msg}"
            );
        }
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn corpus_ndjson_round_trip_is_byte_identical() {
    let model = tiny_codec();
    let mut codec = SceneCodec::new(&model);
    let spec = CorpusSpec::default();
    let scenes = generate_corpus(&spec, &mut codec, 20, 12).unwrap();
    let lines: Vec<String> = scenes.iter().map(scene_to_json).collect();
    let reparsed: Vec<Scene> =
        lines.iter().map(|l| scene_from_json(l).unwrap()).collect();
    let relines: Vec<String> = reparsed.iter().map(scene_to_json).collect();
    assert_eq!(lines, relines);
}

#[test]
fn rasterize_full_window_is_all_ones() {
    let w = WORLD_WINDOW;
    let mask = rasterize_floor(&[[-w, -w], [w, -w], [w, w], [-w, w]], 64, 64).unwrap();
    assert_eq!(mask.interior_count(), 64 * 64);
}

#[test]
fn rasterize_area_matches_polygon_area() {
    let poly = [[-2.0, -1.5], [2.5, -1.5], [2.5, 2.0], [-2.0, 2.0]];
    let mask = rasterize_floor(&poly, 64, 64).unwrap();
    let mask_frac = mask.interior_count() as f64 / (64.0 * 64.0);
    let domain_area = (2.0 * WORLD_WINDOW) * (2.0 * WORLD_WINDOW);
    let poly_frac = polygon_area(&poly).abs() / domain_area;
    assert!(
        (mask_frac - poly_frac).abs() < 0.02,
        "mask fraction {mask_frac} vs polygon fraction {poly_frac}"
    );
}

#[test]
fn rasterize_l_shape_leaves_notch_empty() {
    let poly = [
        [-2.0, -2.0],
        [2.0, -2.0],
        [2.0, 0.0],
        [0.0, 0.0],
        [0.0, 2.0],
        [-2.0, 2.0],
    ];
    let mask = rasterize_floor(&poly, 64, 64).unwrap();
    // A point deep inside the notch quadrant.
    assert!(!mask.contains_world(1.5, 1.5));
    assert!(mask.contains_world(-1.0, -1.0));
}

#[test]
fn rasterize_degenerate_polygon_is_contract_violation() {
    assert!(matches!(
        rasterize_floor(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 16, 16),
        Err(Error::Contract(_))
    ));
}

#[test]
fn wrap_angle_stays_in_range() {
    for r in [-10.0, -3.15, 0.0, 3.14, 3.15, 100.0] {
        let w = wrap_angle(r);
        assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&w), "{r} -> {w}");
    }
    assert!((wrap_angle(std::f64::consts::PI) - (-std::f64::consts::PI)).abs() < 1e-12);
}

#[test]
fn anchor_latents_in_scenes_stay_sorted() {
    let scene = sample_scene(13);
    for inst in &scene.furniture {
        let rebuilt = AnchorLatentSet::from_parts(
            inst.shape.anchors().to_vec(),
            inst.shape.codes().to_vec(),
        );
        assert_eq!(rebuilt, inst.shape);
    }
}
