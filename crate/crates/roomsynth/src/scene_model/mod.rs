//! Scene data model: furniture instances with anchor-latent shapes, floor
//! plan masks, category table, attribute normalization, JSON serialization,
//! and the procedural room corpus.

mod corpus;
mod json;
mod normalize;

pub use corpus::{generate_procedural_scene, generate_corpus, CorpusSpec, SceneCodec};
pub use json::{mask_from_json, mask_to_json, scene_from_json, scene_to_json};
pub use normalize::{denormalize_instance, normalize_instance, CorpusStats};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::YawObb;
use crate::shape_codec::AnchorLatentSet;

/// Content categories of the desk corpus, in table order.
pub const CONTENT_CATEGORIES: [&str; 8] =
    ["bed", "nightstand", "wardrobe", "table", "chair", "sofa", "lamp", "shelf"];
pub const START_LABEL: &str = "start";
pub const END_LABEL: &str = "end";

/// Ordered label list with reserved 'start' and 'end' entries at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    labels: Vec<String>,
}

impl CategoryTable {
    pub fn desk() -> Self {
        let mut labels: Vec<String> =
            CONTENT_CATEGORIES.iter().map(|s| s.to_string()).collect();
        labels.push(START_LABEL.to_string());
        labels.push(END_LABEL.to_string());
        CategoryTable { labels }
    }

    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let starts = labels.iter().filter(|l| *l == START_LABEL).count();
        let ends = labels.iter().filter(|l| *l == END_LABEL).count();
        if starts != 1 || ends != 1 {
            return Err(Error::Contract(
                "category table must contain 'start' and 'end' exactly once".to_string(),
            ));
        }
        Ok(CategoryTable { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Contract(format!("unknown category {label:?}")))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn end_index(&self) -> usize {
        self.index_of(END_LABEL).expect("end present by construction")
    }

    pub fn start_index(&self) -> usize {
        self.index_of(START_LABEL).expect("start present by construction")
    }

    pub fn content_indices(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] != START_LABEL && self.labels[i] != END_LABEL)
            .collect()
    }
}

/// One object of a scene: category, world pose/size, and its shape as an
/// anchor-latent set in the object's canonical frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FurnitureInstance {
    pub category: String,
    /// Translation in room units.
    pub translation: [f64; 3],
    /// Half-extents in room units, componentwise positive.
    pub size: [f64; 3],
    /// Yaw in radians, wrapped to [-pi, pi).
    pub yaw: f64,
    pub shape: AnchorLatentSet,
}

impl FurnitureInstance {
    pub fn obb(&self) -> YawObb {
        YawObb { center: self.translation, half: self.size, yaw: self.yaw }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.size.iter().all(|&s| s > 0.0) {
            return Err(Error::Contract(format!(
                "{}: size must be positive, got {:?}",
                self.category, self.size
            )));
        }
        for (a, _) in self.shape.pairs() {
            if !a.iter().all(|c| (-1.0..=1.0).contains(c)) {
                return Err(Error::Contract(format!(
                    "{}: anchor {a:?} outside the canonical cube",
                    self.category
                )));
            }
        }
        Ok(())
    }
}

/// Wrap an angle to [-pi, pi).
pub fn wrap_angle(r: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (r + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if a >= std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Binary top-down floor mask with its world-to-grid transform
/// [a, b, c, d, e, f]: col = a*x + b*z + c, row = d*x + e*z + f.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlanMask {
    pub h: usize,
    pub w: usize,
    pub cells: Vec<u8>,
    pub transform: [f64; 6],
}

impl FloorPlanMask {
    pub fn interior_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Does a world (x, z) point fall on an interior cell?
    pub fn contains_world(&self, x: f64, z: f64) -> bool {
        let [a, b, c, d, e, f] = self.transform;
        let col = a * x + b * z + c;
        let row = d * x + e * z + f;
        if col < 0.0 || row < 0.0 {
            return false;
        }
        let (ci, ri) = (col as usize, row as usize);
        if ri >= self.h || ci >= self.w {
            return false;
        }
        self.cells[ri * self.w + ci] == 1
    }
}

/// Floor plus an unordered furniture list.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room_type: String,
    pub floor: FloorPlanMask,
    pub furniture: Vec<FurnitureInstance>,
}

impl Scene {
    pub fn validate(&self, min_obj: usize, max_obj: usize) -> Result<()> {
        if self.floor.interior_count() == 0 {
            return Err(Error::Contract("floor mask has no interior cell".to_string()));
        }
        let n = self.furniture.len();
        if n < min_obj || n > max_obj {
            return Err(Error::Contract(format!(
                "furniture count {n} outside [{min_obj}, {max_obj}]"
            )));
        }
        for inst in &self.furniture {
            inst.validate()?;
            if !self.floor.contains_world(inst.translation[0], inst.translation[2]) {
                return Err(Error::Contract(format!(
                    "{} at {:?} is outside the floor polygon",
                    inst.category, inst.translation
                )));
            }
        }
        Ok(())
    }
}

/// Uniform random permutation of the furniture list.
pub fn permute_objects<R: Rng>(scene: &Scene, rng: &mut R) -> Scene {
    let mut out = scene.clone();
    let n = out.furniture.len();
    for i in (1..n).rev() {
        out.furniture.swap(i, rng.gen_range(0..=i));
    }
    out
}

/// Fixed world window of the desk corpus; every mask spans this square.
pub const WORLD_WINDOW: f64 = 3.2;

/// Rasterize a simple rectilinear polygon (world x-z vertices) onto the
/// fixed window: a cell is interior iff its center is inside the polygon.
pub fn rasterize_floor(polygon: &[[f64; 2]], h: usize, w: usize) -> Result<FloorPlanMask> {
    if polygon.len() < 3 {
        return Err(Error::Contract(format!(
            "polygon needs at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    let area = polygon_area(polygon);
    if area.abs() < 1e-12 {
        return Err(Error::Contract("degenerate polygon with zero area".to_string()));
    }
    let cell_w = 2.0 * WORLD_WINDOW / w as f64;
    let cell_h = 2.0 * WORLD_WINDOW / h as f64;
    let mut cells = vec![0u8; h * w];
    for ri in 0..h {
        for ci in 0..w {
            let x = -WORLD_WINDOW + (ci as f64 + 0.5) * cell_w;
            let z = -WORLD_WINDOW + (ri as f64 + 0.5) * cell_h;
            if point_in_polygon(x, z, polygon) {
                cells[ri * w + ci] = 1;
            }
        }
    }
    let transform = [
        1.0 / cell_w,
        0.0,
        WORLD_WINDOW / cell_w,
        0.0,
        1.0 / cell_h,
        WORLD_WINDOW / cell_h,
    ];
    let mask = FloorPlanMask { h, w, cells, transform };
    if mask.interior_count() == 0 {
        return Err(Error::Contract("polygon rasterized to an empty mask".to_string()));
    }
    Ok(mask)
}

pub fn polygon_area(polygon: &[[f64; 2]]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x1, z1] = polygon[i];
        let [x2, z2] = polygon[(i + 1) % n];
        acc += x1 * z2 - x2 * z1;
    }
    acc / 2.0
}

/// Even-odd ray cast.
pub fn point_in_polygon(x: f64, z: f64, polygon: &[[f64; 2]]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, zi] = polygon[i];
        let [xj, zj] = polygon[j];
        if ((zi > z) != (zj > z)) && (x < (xj - xi) * (z - zi) / (zj - zi) + xi) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests;
