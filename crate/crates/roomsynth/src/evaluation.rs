//! Quantitative harness: collision rate, category KL, within-scene shape
//! consistency, cross-run diversity.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{chamfer, extract_boundary_points, obbs_collide, PointCloud};
use crate::scene_generator::GeneratorModel;
use crate::scene_model::{FloorPlanMask, Scene, CONTENT_CATEGORIES};
use crate::shape_codec::{AnchorLatentSet, CodecModel};
use crate::util::fnv1a64;

/// Penetration below this does not count as a collision.
pub const COLLISION_EPS: f64 = 1e-6;
/// Grid resolution for decoded-shape comparisons.
pub const CONSISTENCY_RESOLUTION: usize = 32;
const BOUNDARY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub config_hash: String,
    /// Per-scene (or per-mask) contributions; in-memory only, not written to
    /// report files.
    pub breakdown: Vec<f64>,
}

impl MetricReport {
    pub fn json_line(&self) -> String {
        format!(
            "{{\"metric\":{},\"value\":{},\"n\":{},\"config_hash\":{}}}",
            serde_json::to_string(&self.metric).unwrap(),
            serde_json::to_string(&self.value).unwrap(),
            self.n,
            serde_json::to_string(&self.config_hash).unwrap(),
        )
    }
}

/// Mean over scenes of (colliding objects / objects). Every scene must be
/// non-empty.
pub fn collision_rate(scenes: &[Scene]) -> Result<(f64, Vec<f64>)> {
    if scenes.is_empty() {
        return Err(Error::Contract("collision_rate: empty scene list".to_string()));
    }
    let mut breakdown = Vec::with_capacity(scenes.len());
    for (si, scene) in scenes.iter().enumerate() {
        if scene.furniture.is_empty() {
            return Err(Error::Contract(format!("collision_rate: scene {si} is empty")));
        }
        let obbs: Vec<_> = scene.furniture.iter().map(|f| f.obb()).collect();
        let mut colliding = vec![false; obbs.len()];
        for i in 0..obbs.len() {
            for j in i + 1..obbs.len() {
                if obbs_collide(&obbs[i], &obbs[j], COLLISION_EPS) {
                    colliding[i] = true;
                    colliding[j] = true;
                }
            }
        }
        let c = colliding.iter().filter(|&&b| b).count();
        breakdown.push(c as f64 / obbs.len() as f64);
    }
    let value = breakdown.iter().sum::<f64>() / breakdown.len() as f64;
    Ok((value, breakdown))
}

fn category_distribution(scenes: &[Scene]) -> Vec<f64> {
    let mut counts = vec![0.0; CONTENT_CATEGORIES.len()];
    for scene in scenes {
        for inst in &scene.furniture {
            if let Some(i) = CONTENT_CATEGORIES.iter().position(|c| *c == inst.category) {
                counts[i] += 1.0;
            }
        }
    }
    counts
}

const KL_SMOOTHING: f64 = 1e-4;

fn smoothed(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    let denom = total + KL_SMOOTHING * counts.len() as f64;
    counts.iter().map(|c| (c + KL_SMOOTHING) / denom).collect()
}

/// KL(P_generated || P_reference) over category frequencies with additive
/// smoothing on both sides.
pub fn category_kl(generated: &[Scene], reference: &[Scene]) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Contract("category_kl: empty scene set".to_string()));
    }
    let p = smoothed(&category_distribution(generated));
    let q = smoothed(&category_distribution(reference));
    Ok(p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).sum())
}

/// Decoded boundary cloud of one anchor-latent set; `None` when nothing
/// clears the threshold (a degenerate decode).
fn decode_cloud(codec: &CodecModel, latents: &AnchorLatentSet) -> Result<Option<PointCloud>> {
    let grid = codec.reconstruct_grid(latents, CONSISTENCY_RESOLUTION)?;
    match extract_boundary_points(&grid, BOUNDARY_THRESHOLD) {
        Ok(cloud) => Ok(Some(cloud)),
        Err(Error::Contract(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn latents_key(latents: &AnchorLatentSet) -> u64 {
    let mut bytes = Vec::with_capacity(latents.len() * 32);
    for (a, code) in latents.pairs() {
        for c in a {
            bytes.extend_from_slice(&c.to_bits().to_le_bytes());
        }
        bytes.extend_from_slice(&(code as u64).to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Cache of decoded clouds keyed by latent content; repeated styles decode
/// once.
pub struct DecodeCache<'a> {
    codec: &'a CodecModel,
    cache: HashMap<u64, Option<PointCloud>>,
}

impl<'a> DecodeCache<'a> {
    pub fn new(codec: &'a CodecModel) -> Self {
        DecodeCache { codec, cache: HashMap::new() }
    }

    pub fn cloud(&mut self, latents: &AnchorLatentSet) -> Result<Option<PointCloud>> {
        let key = latents_key(latents);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let cloud = decode_cloud(self.codec, latents)?;
        self.cache.insert(key, cloud.clone());
        Ok(cloud.clone())
    }
}

/// Mean pairwise Chamfer distance between decoded clouds.
pub fn pairwise_chamfer(clouds: &[PointCloud]) -> Option<f64> {
    if clouds.len() < 2 {
        return None;
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..clouds.len() {
        for j in i + 1..clouds.len() {
            acc += chamfer(&clouds[i], &clouds[j]);
            pairs += 1;
        }
    }
    Some(acc / pairs as f64)
}

/// Average over qualifying scenes of the mean pairwise Chamfer distance
/// between decoded same-category instances. Scenes with fewer than two
/// decodable instances are skipped; no qualifying scene is an error.
pub fn within_scene_consistency(
    scenes: &[Scene],
    category: &str,
    codec: &CodecModel,
) -> Result<(f64, Vec<f64>)> {
    if !CONTENT_CATEGORIES.contains(&category) {
        return Err(Error::Contract(format!("unknown category {category:?}")));
    }
    let mut cache = DecodeCache::new(codec);
    let mut breakdown = Vec::new();
    for scene in scenes {
        let mut clouds = Vec::new();
        for inst in scene.furniture.iter().filter(|f| f.category == category) {
            if let Some(cloud) = cache.cloud(&inst.shape)? {
                clouds.push(cloud);
            }
        }
        if let Some(cd) = pairwise_chamfer(&clouds) {
            breakdown.push(cd);
        }
    }
    if breakdown.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no scene has two decodable {category:?} instances"
        )));
    }
    let value = breakdown.iter().sum::<f64>() / breakdown.len() as f64;
    Ok((value, breakdown))
}

/// Mean Chamfer distance between same-category instances drawn from
/// different scenes; the baseline against which within-scene consistency is
/// judged. Pairs are sampled with the given rng.
pub fn cross_scene_baseline(
    scenes: &[Scene],
    category: &str,
    codec: &CodecModel,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut instances: Vec<(usize, &AnchorLatentSet)> = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        for inst in scene.furniture.iter().filter(|f| f.category == category) {
            instances.push((si, &inst.shape));
        }
    }
    let mut cache = DecodeCache::new(codec);
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut attempts = 0usize;
    while used < pairs && attempts < pairs * 20 {
        attempts += 1;
        let a = instances[rng.gen_range(0..instances.len())];
        let b = instances[rng.gen_range(0..instances.len())];
        if a.0 == b.0 {
            continue;
        }
        let (Some(ca), Some(cb)) = (cache.cloud(a.1)?, cache.cloud(b.1)?) else { continue };
        acc += chamfer(&ca, &cb);
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no usable cross-scene {category:?} pair"
        )));
    }
    Ok(acc / used as f64)
}

/// Generate `runs` scenes per mask with independent seeds, pick one random
/// instance of the category per run, and average pairwise Chamfer distance
/// across runs; mask values are then averaged. Runs lacking the category are
/// skipped; a mask needs two usable runs to count.
pub fn cross_run_diversity(
    masks: &[FloorPlanMask],
    model: &GeneratorModel,
    codec: &CodecModel,
    runs: usize,
    category: &str,
    max_objects: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if runs < 2 {
        return Err(Error::Contract("cross_run_diversity: runs must be >= 2".to_string()));
    }
    let mut cache = DecodeCache::new(codec);
    let mut breakdown = Vec::new();
    for (mi, mask) in masks.iter().enumerate() {
        let mut clouds = Vec::new();
        for run in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ fnv1a64(format!("diversity:{mi}:{run}").as_bytes()),
            );
            let scene = model.generate(mask, &mut rng, max_objects)?;
            let candidates: Vec<&AnchorLatentSet> = scene
                .furniture
                .iter()
                .filter(|f| f.category == category)
                .map(|f| &f.shape)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let pick = candidates[rng.gen_range(0..candidates.len())];
            if let Some(cloud) = cache.cloud(pick)? {
                clouds.push(cloud);
            }
        }
        if let Some(cd) = pairwise_chamfer(&clouds) {
            breakdown.push(cd);
        }
    }
    if breakdown.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no mask produced two usable {category:?} runs"
        )));
    }
    let value = breakdown.iter().sum::<f64>() / breakdown.len() as f64;
    Ok((value, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_model::{FurnitureInstance, Scene};
    use crate::shape_codec::{CodecConfig, CodecModel};

    fn mask() -> FloorPlanMask {
        FloorPlanMask { h: 4, w: 4, cells: vec![1; 16], transform: [1.0, 0.0, 2.0, 0.0, 1.0, 2.0] }
    }

    fn boxy(category: &str, x: f64, z: f64, half: f64) -> FurnitureInstance {
        FurnitureInstance {
            category: category.to_string(),
            translation: [x, 0.5, z],
            size: [half, 0.5, half],
            yaw: 0.0,
            shape: AnchorLatentSet::new(vec![([0.0; 3], 0)]),
        }
    }

    #[test]
    fn collision_rate_definition() {
        // Four objects, exactly the first two overlap.
        let scene = Scene {
            room_type: "room".to_string(),
            floor: mask(),
            furniture: vec![
                boxy("chair", 0.0, 0.0, 0.5),
                boxy("chair", 0.4, 0.0, 0.5),
                boxy("table", 5.0, 5.0, 0.5),
                boxy("lamp", -5.0, -5.0, 0.5),
            ],
        };
        let (rate, breakdown) = collision_rate(&[scene]).unwrap();
        assert_eq!(rate, 0.5);
        assert_eq!(breakdown, vec![0.5]);
    }

    #[test]
    fn collision_rate_rejects_empty_inputs() {
        assert!(collision_rate(&[]).is_err());
        let empty = Scene { room_type: "room".to_string(), floor: mask(), furniture: vec![] };
        assert!(collision_rate(&[empty]).is_err());
    }

    #[test]
    fn collision_rate_order_invariant_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for _ in 0..50 {
            let n = rng.gen_range(2..8usize);
            let mut furniture: Vec<FurnitureInstance> = (0..n)
                .map(|_| {
                    boxy(
                        "chair",
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(0.2..0.8),
                    )
                })
                .collect();
            let scene =
                Scene { room_type: "room".to_string(), floor: mask(), furniture: furniture.clone() };
            let (before, _) = collision_rate(std::slice::from_ref(&scene)).unwrap();

            // Permutation invariance.
            furniture.reverse();
            let reversed =
                Scene { room_type: "room".to_string(), floor: mask(), furniture: furniture.clone() };
            let (rev, _) = collision_rate(std::slice::from_ref(&reversed)).unwrap();
            assert_eq!(before, rev);

            // Add an object overlapping an existing one: per-scene ratio
            // cannot drop.
            let target = furniture[0].translation;
            furniture.push(boxy("chair", target[0] + 0.01, target[2], 0.5));
            let grown = Scene { room_type: "room".to_string(), floor: mask(), furniture };
            let (after, _) = collision_rate(std::slice::from_ref(&grown)).unwrap();
            assert!(after >= before - 1e-12, "rate dropped from {before} to {after}");
        }
    }

    #[test]
    fn category_kl_zero_and_analytic() {
        let uniform: Vec<Scene> = CONTENT_CATEGORIES
            .iter()
            .map(|c| Scene {
                room_type: "room".to_string(),
                floor: mask(),
                furniture: vec![boxy(c, 0.0, 0.0, 0.3)],
            })
            .collect();
        assert!(category_kl(&uniform, &uniform).unwrap().abs() < 1e-9);

        let all_chairs = vec![Scene {
            room_type: "room".to_string(),
            floor: mask(),
            furniture: (0..8).map(|i| boxy("chair", i as f64, 0.0, 0.2)).collect(),
        }];
        let kl = category_kl(&all_chairs, &uniform).unwrap();
        assert!((kl - 8.0f64.ln()).abs() < 1e-2, "kl {kl} vs ln 8 {}", 8.0f64.ln());
    }

    #[test]
    fn category_kl_matches_hand_rolled_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(501);
        for _ in 0..20 {
            let make = |rng: &mut ChaCha8Rng| -> Vec<Scene> {
                CONTENT_CATEGORIES
                    .iter()
                    .map(|c| Scene {
                        room_type: "room".to_string(),
                        floor: mask(),
                        furniture: (0..rng.gen_range(1..10))
                            .map(|i| boxy(c, i as f64, 0.0, 0.1))
                            .collect(),
                    })
                    .collect()
            };
            let gen = make(&mut rng);
            let reference = make(&mut rng);
            let kl = category_kl(&gen, &reference).unwrap();

            // Two-line oracle over raw counts.
            let counts = |s: &[Scene]| {
                let mut c = vec![0.0; 8];
                for scene in s {
                    for f in &scene.furniture {
                        c[CONTENT_CATEGORIES.iter().position(|x| *x == f.category).unwrap()] += 1.0;
                    }
                }
                c
            };
            let (cg, cr) = (counts(&gen), counts(&reference));
            let (tg, tr) = (cg.iter().sum::<f64>(), cr.iter().sum::<f64>());
            let oracle: f64 = (0..8)
                .map(|i| {
                    let p = (cg[i] + 1e-4) / (tg + 8e-4);
                    let q = (cr[i] + 1e-4) / (tr + 8e-4);
                    p * (p / q).ln()
                })
                .sum();
            assert!((kl - oracle).abs() < 1e-12);
            assert!(kl >= 0.0);
        }
    }

    fn tiny_codec() -> CodecModel {
        let c = CodecConfig {
            n_surface: 128,
            m_anchors: 8,
            knn: 4,
            codebook_size: 16,
            latent_dim: 8,
            queries_per_step: 32,
            epochs: 1,
            lr: 1e-3,
            commitment_weight: 0.25,
            pos_dims: 4,
            enc_attn_layers: 1,
            dec_attn_layers: 1,
            attn_heads: 2,
            ff_dim: 16,
            ema_decay: 0.99,
            ema_eps: 1e-5,
            dead_code_steps: 50,
            near_surface_noise: 0.05,
            warmup_epochs: 0,
        };
        CodecModel::init(c, 502)
    }

    #[test]
    fn consistency_zero_for_duplicated_shapes_and_undefined_without_pairs() {
        let codec = tiny_codec();
        let latents = AnchorLatentSet::new(
            (0..8)
                .map(|i| ([i as f64 / 8.0 - 0.5, 0.1 * i as f64 - 0.4, 0.0], i % 16))
                .collect(),
        );
        let mut chair = boxy("chair", 0.0, 0.0, 0.4);
        chair.shape = latents;
        let scene = Scene {
            room_type: "room".to_string(),
            floor: mask(),
            furniture: vec![chair.clone(), chair.clone()],
        };
        let (cd, breakdown) = within_scene_consistency(&[scene.clone()], "chair", &codec).unwrap();
        assert_eq!(cd, 0.0, "identical latents must decode to identical clouds");
        assert_eq!(breakdown.len(), 1);

        // One chair only: no qualifying scene.
        let single = Scene {
            room_type: "room".to_string(),
            floor: mask(),
            furniture: vec![chair],
        };
        match within_scene_consistency(&[single], "chair", &codec) {
            Err(Error::UndefinedMetric(_)) => {}
            other => panic!("expected undefined metric, got {other:?}"),
        }
    }

    #[test]
    fn consistency_matches_direct_recomputation() {
        let codec = tiny_codec();
        let mut rng = ChaCha8Rng::seed_from_u64(503);
        let mut scenes = Vec::new();
        for _ in 0..10 {
            let n = rng.gen_range(2..4usize);
            let furniture: Vec<FurnitureInstance> = (0..n)
                .map(|_| {
                    let latents = AnchorLatentSet::new(
                        (0..8)
                            .map(|_| {
                                (
                                    [
                                        rng.gen_range(-0.9..0.9),
                                        rng.gen_range(-0.9..0.9),
                                        rng.gen_range(-0.9..0.9),
                                    ],
                                    rng.gen_range(0..16),
                                )
                            })
                            .collect(),
                    );
                    let mut f = boxy("chair", 0.0, 0.0, 0.3);
                    f.shape = latents;
                    f
                })
                .collect();
            scenes.push(Scene { room_type: "room".to_string(), floor: mask(), furniture });
        }
        let (value, _) = within_scene_consistency(&scenes, "chair", &codec).unwrap();

        // Independent recomputation without the cache machinery.
        let mut scene_values = Vec::new();
        for scene in &scenes {
            let mut clouds = Vec::new();
            for f in &scene.furniture {
                let grid = codec.reconstruct_grid(&f.shape, CONSISTENCY_RESOLUTION).unwrap();
                if let Ok(c) = extract_boundary_points(&grid, 0.5) {
                    clouds.push(c);
                }
            }
            if clouds.len() >= 2 {
                let mut acc = 0.0;
                let mut k = 0;
                for i in 0..clouds.len() {
                    for j in i + 1..clouds.len() {
                        acc += chamfer(&clouds[i], &clouds[j]);
                        k += 1;
                    }
                }
                scene_values.push(acc / k as f64);
            }
        }
        let oracle = scene_values.iter().sum::<f64>() / scene_values.len() as f64;
        assert!((value - oracle).abs() < 1e-9);
    }

    #[test]
    fn pairwise_chamfer_degenerate_cases() {
        let c1 = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let c2 = PointCloud::new(vec![[0.0, 1.0, 0.0]]);
        // Two clouds: equals one chamfer call.
        let d = pairwise_chamfer(&[c1.clone(), c2.clone()]).unwrap();
        assert_eq!(d, chamfer(&c1, &c2));
        // Identical clouds everywhere -> 0 (the fixed-output generator stub).
        let d0 = pairwise_chamfer(&[c1.clone(), c1.clone(), c1.clone()]).unwrap();
        assert_eq!(d0, 0.0);
        assert!(pairwise_chamfer(&[c1]).is_none());
    }

    #[test]
    fn report_line_has_exactly_the_wire_fields() {
        let r = MetricReport {
            metric: "collision".to_string(),
            value: 0.125,
            n: 100,
            config_hash: "abc123".to_string(),
            breakdown: vec![0.0, 0.25],
        };
        let line = r.json_line();
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        let obj = parsed.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        assert_eq!(obj["metric"], "collision");
        assert_eq!(obj["value"], 0.125);
        assert_eq!(obj["n"], 100);
        assert_eq!(obj["config_hash"], "abc123");
    }
}
