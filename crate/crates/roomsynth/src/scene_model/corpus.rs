//! Procedural room corpus: rectilinear rooms, template furniture groups
//! placed with rejection sampling against OBB overlap, style consistency
//! baked in (one style seed per category per scene), anchor latents encoded
//! by the trained codec.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    point_in_polygon, rasterize_floor, FloorPlanMask, FurnitureInstance, Scene,
    CONTENT_CATEGORIES,
};
use crate::error::{Error, Result};
use crate::geometry::{make_furniture, obbs_collide, sample_surface, YawObb};
use crate::shape_codec::{AnchorLatentSet, CodecModel};
use crate::util::fnv1a64;

/// Corpus-generation knobs; the default is the desk corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub room_min_half: f64,
    pub room_max_half: f64,
    pub l_shape_prob: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub styles_per_category: u64,
    pub mask_resolution: usize,
    pub p_bed_group: f64,
    pub p_wardrobe: f64,
    pub p_sofa: f64,
    pub p_shelf: f64,
    pub p_lamp: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            room_min_half: 1.6,
            room_max_half: 3.0,
            l_shape_prob: 0.35,
            min_objects: 3,
            max_objects: 13,
            styles_per_category: 8,
            mask_resolution: 64,
            p_bed_group: 0.7,
            p_wardrobe: 0.5,
            p_sofa: 0.5,
            p_shelf: 0.5,
            p_lamp: 0.8,
        }
    }
}

impl CorpusSpec {
    /// Analytic per-category object marginals implied by the template
    /// probabilities (table group always present; chairs 2..=5 uniform;
    /// nightstands 1..=2 uniform with the bed).
    pub fn expected_quotas(&self) -> Vec<(String, f64)> {
        let e_chair = 3.5;
        let e_night = 1.5 * self.p_bed_group;
        let counts: Vec<(&str, f64)> = vec![
            ("bed", self.p_bed_group),
            ("nightstand", e_night),
            ("wardrobe", self.p_wardrobe),
            ("table", 1.0),
            ("chair", e_chair),
            ("sofa", self.p_sofa),
            ("lamp", self.p_lamp),
            ("shelf", self.p_shelf),
        ];
        let total: f64 = counts.iter().map(|(_, c)| c).sum();
        counts
            .into_iter()
            .map(|(name, c)| (name.to_string(), c / total))
            .collect()
    }
}

/// Nominal world half-height per category; canonical solids are scaled so
/// their bounding box reaches it.
fn world_half_height(category: &str) -> f64 {
    match category {
        "bed" => 0.45,
        "nightstand" => 0.30,
        "wardrobe" => 1.00,
        "table" => 0.40,
        "chair" => 0.45,
        "sofa" => 0.45,
        "lamp" => 0.70,
        "shelf" => 0.90,
        _ => 0.50,
    }
}

/// Caching encoder wrapper: each distinct (category, style) is sampled and
/// encoded once; identical styles therefore share identical latents.
pub struct SceneCodec<'a> {
    model: &'a CodecModel,
    cache: HashMap<(String, u64), (AnchorLatentSet, [f64; 3], [f64; 3])>,
}

impl<'a> SceneCodec<'a> {
    pub fn new(model: &'a CodecModel) -> Self {
        SceneCodec { model, cache: HashMap::new() }
    }

    pub fn model(&self) -> &CodecModel {
        self.model
    }

    /// Latents plus the canonical bbox (lo, hi) for a styled solid.
    pub fn encode_style(
        &mut self,
        category: &str,
        style: u64,
    ) -> Result<(AnchorLatentSet, [f64; 3], [f64; 3])> {
        let key = (category.to_string(), style);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let solid = make_furniture(category, style)?;
        let seed = fnv1a64(format!("style-cloud:{category}:{style}").as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = sample_surface(&solid, self.model.config.n_surface, &mut rng)?;
        let latents = self.model.encode_quantize(&cloud)?;
        let (lo, hi) = solid.bounding_box();
        let entry = (latents, lo, hi);
        self.cache.insert(key, entry.clone());
        Ok(entry)
    }
}

struct Placer<'p> {
    polygon: &'p [[f64; 2]],
    mask: &'p FloorPlanMask,
    placed: Vec<YawObb>,
    rejections: usize,
}

const REJECTION_BUDGET: usize = 500;
/// Safety margin used while authoring so the evaluated collision rate of an
/// authored corpus is exactly zero.
const PLACEMENT_MARGIN: f64 = 0.01;

impl<'p> Placer<'p> {
    fn try_place(&mut self, obb: &YawObb) -> Result<bool> {
        self.rejections += 1;
        if self.rejections > REJECTION_BUDGET {
            return Err(Error::Generation(format!(
                "placement failed after {REJECTION_BUDGET} rejections"
            )));
        }
        // Both the exact polygon and its raster must contain the center;
        // scene validation checks against the raster.
        if !point_in_polygon(obb.center[0], obb.center[2], self.polygon)
            || !self.mask.contains_world(obb.center[0], obb.center[2])
        {
            return Ok(false);
        }
        let grown = YawObb {
            half: [
                obb.half[0] + PLACEMENT_MARGIN,
                obb.half[1] + PLACEMENT_MARGIN,
                obb.half[2] + PLACEMENT_MARGIN,
            ],
            ..*obb
        };
        if self.placed.iter().any(|p| obbs_collide(&grown, p, 0.0)) {
            return Ok(false);
        }
        self.placed.push(*obb);
        Ok(true)
    }
}

struct StyledShape {
    latents: AnchorLatentSet,
    /// World half-extents after scaling.
    half: [f64; 3],
    /// World-space y of the box center when the object rests on the floor.
    center_y: f64,
}

fn styled_shape(codec: &mut SceneCodec<'_>, category: &str, style: u64) -> Result<StyledShape> {
    let (latents, lo, hi) = codec.encode_style(category, style)?;
    let ch = [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0, (hi[2] - lo[2]) / 2.0];
    let scale = world_half_height(category) / ch[1];
    Ok(StyledShape {
        latents,
        half: [ch[0] * scale, ch[1] * scale, ch[2] * scale],
        center_y: ch[1] * scale,
    })
}

/// Facing direction (unit x-z) for a yaw angle: local +z rotated into world.
fn facing(yaw: f64) -> [f64; 2] {
    [-yaw.sin(), yaw.cos()]
}

/// One procedurally authored scene. Objects never overlap (rejection
/// sampling), every translation lies inside the floor polygon, and all
/// instances of a category share one style.
pub fn generate_procedural_scene(
    spec: &CorpusSpec,
    codec: &mut SceneCodec<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Scene> {
    // Room polygon, optionally L-shaped.
    let hw = rng.gen_range(spec.room_min_half..spec.room_max_half);
    let hd = rng.gen_range(spec.room_min_half..spec.room_max_half);
    let polygon: Vec<[f64; 2]> = if rng.gen_bool(spec.l_shape_prob) {
        let nx = hw * rng.gen_range(0.4..0.8);
        let nz = hd * rng.gen_range(0.4..0.8);
        vec![
            [-hw, -hd],
            [hw, -hd],
            [hw, hd - nz],
            [hw - nx, hd - nz],
            [hw - nx, hd],
            [-hw, hd],
        ]
    } else {
        vec![[-hw, -hd], [hw, -hd], [hw, hd], [-hw, hd]]
    };
    let floor = rasterize_floor(&polygon, spec.mask_resolution, spec.mask_resolution)?;

    // One style per category per scene: this is the consistency signal the
    // generator is supposed to learn.
    let mut styles = HashMap::new();
    for cat in CONTENT_CATEGORIES {
        styles.insert(cat, rng.gen_range(0..spec.styles_per_category));
    }

    let mut placer =
        Placer { polygon: &polygon, mask: &floor, placed: Vec::new(), rejections: 0 };
    let mut furniture: Vec<FurnitureInstance> = Vec::new();

    let push = |placer: &mut Placer,
                    furniture: &mut Vec<FurnitureInstance>,
                    codec: &mut SceneCodec<'_>,
                    category: &str,
                    style: u64,
                    t_xz: [f64; 2],
                    yaw: f64|
     -> Result<bool> {
        let shape = styled_shape(codec, category, style)?;
        let yaw = super::wrap_angle(yaw);
        let translation = [t_xz[0], shape.center_y, t_xz[1]];
        let obb = YawObb { center: translation, half: shape.half, yaw };
        if placer.try_place(&obb)? {
            furniture.push(FurnitureInstance {
                category: category.to_string(),
                translation,
                size: shape.half,
                yaw,
                shape: shape.latents,
            });
            Ok(true)
        } else {
            Ok(false)
        }
    };

    // Table group, always present: a table near the room middle with 2..=5
    // chairs around it, facing it.
    {
        let style = styles["table"];
        let tshape = styled_shape(codec, "table", style)?;
        let mut placed_at = None;
        while placed_at.is_none() {
            let t = [
                rng.gen_range(-hw + tshape.half[0] + 0.8..hw - tshape.half[0] - 0.8),
                rng.gen_range(-hd + tshape.half[2] + 0.8..hd - tshape.half[2] - 0.8),
            ];
            if push(&mut placer, &mut furniture, codec, "table", style, t, 0.0)? {
                placed_at = Some(t);
            }
        }
        let center = placed_at.unwrap();
        let n_chairs = rng.gen_range(2..=5usize);
        let chair_style = styles["chair"];
        let cshape = styled_shape(codec, "chair", chair_style)?;
        // Sides cycle south, north, west, east; chairs face the table.
        let sides = [
            ([0.0, -1.0], 0.0),
            ([0.0, 1.0], std::f64::consts::PI),
            ([-1.0, 0.0], -std::f64::consts::FRAC_PI_2),
            ([1.0, 0.0], std::f64::consts::FRAC_PI_2),
        ];
        let mut placed_chairs = 0;
        let mut side_idx = 0;
        let mut attempts = 0;
        while placed_chairs < n_chairs && attempts < 40 {
            attempts += 1;
            let (dir, yaw) = sides[side_idx % 4];
            side_idx += 1;
            let table_r = if dir[0] != 0.0 { tshape.half[0] } else { tshape.half[2] };
            let chair_r = if dir[0] != 0.0 { cshape.half[0] } else { cshape.half[2] };
            let gap = rng.gen_range(0.12..0.30);
            let along = rng.gen_range(-0.2..0.2);
            let dist = table_r + chair_r + gap;
            let t = [
                center[0] + dir[0] * dist + dir[1] * along,
                center[1] + dir[1] * dist + dir[0] * along,
            ];
            if push(&mut placer, &mut furniture, codec, "chair", chair_style, t, yaw)? {
                placed_chairs += 1;
            }
        }
        if placed_chairs < 2 {
            return Err(Error::Generation("could not seat two chairs".to_string()));
        }
    }

    // Wall-mounted helpers: wall 0 = south (z=-hd), 1 = north, 2 = west, 3 = east.
    let wall_pose = |rng: &mut ChaCha8Rng, half: &[f64; 3], hw: f64, hd: f64| -> ([f64; 2], f64) {
        let wall = rng.gen_range(0..4u8);
        match wall {
            0 => ([rng.gen_range(-hw + half[0]..hw - half[0]), -hd + half[2] + 0.03], 0.0),
            1 => (
                [rng.gen_range(-hw + half[0]..hw - half[0]), hd - half[2] - 0.03],
                std::f64::consts::PI,
            ),
            2 => (
                [-hw + half[2] + 0.03, rng.gen_range(-hd + half[0]..hd - half[0])],
                -std::f64::consts::FRAC_PI_2,
            ),
            _ => (
                [hw - half[2] - 0.03, rng.gen_range(-hd + half[0]..hd - half[0])],
                std::f64::consts::FRAC_PI_2,
            ),
        }
    };

    // Bed group against a wall with 1..=2 flanking nightstands. The bed
    // keeps side margin so the nightstands have somewhere to go.
    if rng.gen_bool(spec.p_bed_group) {
        let style = styles["bed"];
        let bshape = styled_shape(codec, "bed", style)?;
        let nshape = styled_shape(codec, "nightstand", styles["nightstand"])?;
        let margin = 2.0 * nshape.half[0] + 0.35;
        let padded = [bshape.half[0] + margin, bshape.half[1], bshape.half[2]];
        let mut bed_pose = None;
        for attempt in 0..30 {
            // Give up on the margin if the room is too tight for it.
            let half = if attempt < 20 && hw > padded[0] + 0.05 && hd > padded[0] + 0.05 {
                &padded
            } else {
                &bshape.half
            };
            let (t, yaw) = wall_pose(rng, half, hw, hd);
            if push(&mut placer, &mut furniture, codec, "bed", style, t, yaw)? {
                bed_pose = Some((t, yaw));
                break;
            }
        }
        if let Some((bt, byaw)) = bed_pose {
            let n_night = rng.gen_range(1..=2usize);
            let nstyle = styles["nightstand"];
            let nshape = styled_shape(codec, "nightstand", nstyle)?;
            // Offsets sideways along the wall.
            let f = facing(byaw);
            let side = [f[1], -f[0]];
            for k in 0..n_night {
                let preferred = if k == 0 { 1.0 } else { -1.0 };
                for attempt in 0..20 {
                    // Alternate sides when the preferred one is blocked.
                    let sign = if attempt % 2 == 0 { preferred } else { -preferred };
                    let dist = bshape.half[0] + nshape.half[0] + rng.gen_range(0.10..0.35);
                    let t = [bt[0] + side[0] * dist * sign, bt[1] + side[1] * dist * sign];
                    if push(&mut placer, &mut furniture, codec, "nightstand", nstyle, t, byaw)? {
                        break;
                    }
                }
            }
        }
    }

    for (cat, p) in [("wardrobe", spec.p_wardrobe), ("sofa", spec.p_sofa), ("shelf", spec.p_shelf)]
    {
        if rng.gen_bool(p) {
            let style = styles[cat];
            let shape = styled_shape(codec, cat, style)?;
            for _ in 0..30 {
                let (t, yaw) = wall_pose(rng, &shape.half, hw, hd);
                if push(&mut placer, &mut furniture, codec, cat, style, t, yaw)? {
                    break;
                }
            }
        }
    }

    // A lamp anywhere free.
    if rng.gen_bool(spec.p_lamp) {
        let style = styles["lamp"];
        let shape = styled_shape(codec, "lamp", style)?;
        for _ in 0..30 {
            let t = [
                rng.gen_range(-hw + shape.half[0]..hw - shape.half[0]),
                rng.gen_range(-hd + shape.half[2]..hd - shape.half[2]),
            ];
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            if push(&mut placer, &mut furniture, codec, "lamp", style, t, yaw)? {
                break;
            }
        }
    }

    let scene = Scene { room_type: "room".to_string(), floor, furniture };
    scene
        .validate(spec.min_objects, spec.max_objects)
        .map_err(|e| Error::Generation(format!("authored scene failed validation: {e}")))?;
    Ok(scene)
}

/// Exactly `count` scenes; failed placements are discarded and the attempt
/// stream continues, so output is deterministic in (spec, seed).
pub fn generate_corpus(
    spec: &CorpusSpec,
    codec: &mut SceneCodec<'_>,
    count: usize,
    seed: u64,
) -> Result<Vec<Scene>> {
    let mut scenes = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while scenes.len() < count {
        if attempt > 20 * count as u64 + 100 {
            return Err(Error::Generation(format!(
                "corpus generation stalled: {} scenes after {attempt} attempts",
                scenes.len()
            )));
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(format!("scene:{attempt}").as_bytes()));
        attempt += 1;
        match generate_procedural_scene(spec, codec, &mut rng) {
            Ok(scene) => scenes.push(scene),
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(scenes)
}
