//! CSG furniture solids: box/cylinder unions with analytic occupancy and
//! area-weighted surface sampling. The procedural recipes below are the
//! training corpus; same (category, style_seed) always yields the same solid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// All solid geometry stays inside this cube after normalization.
pub const CANONICAL_BOUND: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Box { center: [f64; 3], half: [f64; 3] },
    /// Vertical-axis cylinder.
    Cylinder { center: [f64; 3], radius: f64, half_height: f64 },
}

/// Boundary-inclusive tolerance; surface samples sit exactly on faces and
/// must count as inside despite rounding.
const BOUNDARY_EPS: f64 = 1e-9;

impl Primitive {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        match self {
            Primitive::Box { center, half } => {
                (0..3).all(|i| (p[i] - center[i]).abs() <= half[i] + BOUNDARY_EPS)
            }
            Primitive::Cylinder { center, radius, half_height } => {
                let dx = p[0] - center[0];
                let dz = p[2] - center[2];
                dx * dx + dz * dz <= (radius + BOUNDARY_EPS) * (radius + BOUNDARY_EPS)
                    && (p[1] - center[1]).abs() <= *half_height + BOUNDARY_EPS
            }
        }
    }

    fn contains_strict(&self, p: &[f64; 3]) -> bool {
        match self {
            Primitive::Box { center, half } => (0..3).all(|i| (p[i] - center[i]).abs() < half[i]),
            Primitive::Cylinder { center, radius, half_height } => {
                let dx = p[0] - center[0];
                let dz = p[2] - center[2];
                dx * dx + dz * dz < radius * radius && (p[1] - center[1]).abs() < *half_height
            }
        }
    }

    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Primitive::Box { center, half } => (
                [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
                [center[0] + half[0], center[1] + half[1], center[2] + half[2]],
            ),
            Primitive::Cylinder { center, radius, half_height } => (
                [center[0] - radius, center[1] - half_height, center[2] - radius],
                [center[0] + radius, center[1] + half_height, center[2] + radius],
            ),
        }
    }

    fn surface_area(&self) -> f64 {
        match self {
            Primitive::Box { half, .. } => {
                8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
            }
            Primitive::Cylinder { radius, half_height, .. } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                side + 2.0 * std::f64::consts::PI * radius * radius
            }
        }
    }

    /// Uniform sample on this primitive's own surface.
    fn sample_point<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        match self {
            Primitive::Box { center, half } => {
                // Face areas: two each orthogonal to x, y, z.
                let ax = half[1] * half[2];
                let ay = half[0] * half[2];
                let az = half[0] * half[1];
                let total = 2.0 * (ax + ay + az);
                let mut pick = rng.gen_range(0.0..total);
                let u = rng.gen_range(-1.0..1.0);
                let v = rng.gen_range(-1.0..1.0);
                for (axis, area) in [(0usize, ax), (1, ay), (2, az)] {
                    if pick < 2.0 * area {
                        let sign = if pick < area { -1.0 } else { 1.0 };
                        let mut p = *center;
                        p[axis] += sign * half[axis];
                        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                        p[a1] += u * half[a1];
                        p[a2] += v * half[a2];
                        return p;
                    }
                    pick -= 2.0 * area;
                }
                unreachable!("face pick out of range")
            }
            Primitive::Cylinder { center, radius, half_height } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                let cap = std::f64::consts::PI * radius * radius;
                let pick = rng.gen_range(0.0..side + 2.0 * cap);
                let theta = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                if pick < side {
                    let y = rng.gen_range(-half_height..*half_height);
                    [
                        center[0] + radius * theta.cos(),
                        center[1] + y,
                        center[2] + radius * theta.sin(),
                    ]
                } else {
                    let sign = if pick < side + cap { -1.0 } else { 1.0 };
                    let r = radius * rng.gen::<f64>().sqrt();
                    [
                        center[0] + r * theta.cos(),
                        center[1] + sign * half_height,
                        center[2] + r * theta.sin(),
                    ]
                }
            }
        }
    }
}

/// Union of primitives with a category label.
#[derive(Debug, Clone, PartialEq)]
pub struct FurnitureSolid {
    pub category: String,
    pub primitives: Vec<Primitive>,
}

impl FurnitureSolid {
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.primitives {
            let (plo, phi) = p.bounding_box();
            for i in 0..3 {
                lo[i] = lo[i].min(plo[i]);
                hi[i] = hi[i].max(phi[i]);
            }
        }
        (lo, hi)
    }
}

/// 1 iff `p` is inside any primitive; boundaries count as inside.
pub fn occupancy(solid: &FurnitureSolid, p: &[f64; 3]) -> f64 {
    if solid.primitives.iter().any(|prim| prim.contains(p)) {
        1.0
    } else {
        0.0
    }
}

/// `n` points on the union surface: primitive faces drawn with probability
/// proportional to area, samples strictly inside another primitive rejected.
pub fn sample_surface<R: Rng>(solid: &FurnitureSolid, n: usize, rng: &mut R) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Contract("sample_surface: n must be >= 1".to_string()));
    }
    let areas: Vec<f64> = solid.primitives.iter().map(|p| p.surface_area()).collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(Error::Contract("sample_surface: zero-area solid".to_string()));
    }
    let mut points = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let budget = 10_000 * n;
    while points.len() < n {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Contract(
                "sample_surface: rejection budget exhausted (degenerate union)".to_string(),
            ));
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = solid.primitives.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                chosen = i;
                break;
            }
            pick -= a;
        }
        let p = solid.primitives[chosen].sample_point(rng);
        let buried = solid
            .primitives
            .iter()
            .enumerate()
            .any(|(i, prim)| i != chosen && prim.contains_strict(&p));
        if !buried {
            points.push(p);
        }
    }
    Ok(PointCloud::new(points))
}

/// Deterministic procedural solid for (category, style_seed).
pub fn make_furniture(category: &str, style_seed: u64) -> Result<FurnitureSolid> {
    let seed = style_seed ^ fnv1a64(category.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let primitives = match category {
        "chair" => chair(r),
        "table" => table(r),
        "bed" => bed(r),
        "nightstand" => nightstand(r),
        "wardrobe" => wardrobe(r),
        "sofa" => sofa(r),
        "lamp" => lamp(r),
        "shelf" => shelf(r),
        other => {
            return Err(Error::Contract(format!("unknown furniture category {other:?}")));
        }
    };
    let solid = FurnitureSolid { category: category.to_string(), primitives };
    let (lo, hi) = solid.bounding_box();
    debug_assert!(
        lo.iter().all(|&v| v >= -CANONICAL_BOUND - 1e-12)
            && hi.iter().all(|&v| v <= CANONICAL_BOUND + 1e-12),
        "{category} seed {style_seed} escapes the canonical cube: {lo:?} {hi:?}"
    );
    Ok(solid)
}

const FLOOR: f64 = -CANONICAL_BOUND;

fn bx(center: [f64; 3], half: [f64; 3]) -> Primitive {
    Primitive::Box { center, half }
}

/// Box spanning [y0, y1] vertically.
fn bx_span(x: f64, z: f64, hx: f64, hz: f64, y0: f64, y1: f64) -> Primitive {
    bx([x, (y0 + y1) / 2.0, z], [hx, (y1 - y0) / 2.0, hz])
}

fn chair(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.40..0.62);
    let d = r.gen_range(0.40..0.62);
    let seat_top = r.gen_range(-0.25..0.05);
    let seat_th = r.gen_range(0.05..0.10);
    let leg = r.gen_range(0.04..0.10);
    let back_top = (seat_top + r.gen_range(0.55..0.95f64)).min(CANONICAL_BOUND);
    let back_th = r.gen_range(0.05..0.10);
    let mut prims = vec![bx_span(0.0, 0.0, w, d, seat_top - seat_th, seat_top)];
    for &sx in &[-1.0, 1.0] {
        for &sz in &[-1.0, 1.0] {
            prims.push(bx_span(
                sx * (w - leg),
                sz * (d - leg),
                leg,
                leg,
                FLOOR,
                seat_top - seat_th,
            ));
        }
    }
    prims.push(bx_span(0.0, -(d - back_th), w, back_th, seat_top, back_top));
    prims
}

fn table(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.60..0.93);
    let d = r.gen_range(0.60..0.93);
    let top = r.gen_range(-0.05..0.30);
    let th = r.gen_range(0.04..0.09);
    let leg = r.gen_range(0.05..0.11);
    let inset = r.gen_range(0.02..0.12);
    let mut prims = vec![bx_span(0.0, 0.0, w, d, top - th, top)];
    for &sx in &[-1.0, 1.0] {
        for &sz in &[-1.0, 1.0] {
            prims.push(bx_span(
                sx * (w - leg - inset),
                sz * (d - leg - inset),
                leg,
                leg,
                FLOOR,
                top - th,
            ));
        }
    }
    prims
}

fn bed(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.65..0.93);
    let d = r.gen_range(0.80..0.93);
    let base_top = FLOOR + r.gen_range(0.25..0.40);
    let mat_top = base_top + r.gen_range(0.12..0.25);
    let head_top = mat_top + r.gen_range(0.25..0.50);
    let head_th = r.gen_range(0.05..0.10);
    vec![
        bx_span(0.0, 0.0, w, d, FLOOR, base_top),
        bx_span(0.0, 0.02, w * 0.95, d * 0.93, base_top, mat_top),
        bx_span(0.0, -(d - head_th), w, head_th, FLOOR, head_top),
    ]
}

fn nightstand(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.45..0.75);
    let d = r.gen_range(0.45..0.75);
    let leg = r.gen_range(0.04..0.08);
    let leg_top = FLOOR + r.gen_range(0.10..0.22);
    let body_top = leg_top + r.gen_range(0.55..0.90);
    let mut prims = vec![bx_span(0.0, 0.0, w, d, leg_top, body_top)];
    for &sx in &[-1.0, 1.0] {
        for &sz in &[-1.0, 1.0] {
            prims.push(bx_span(sx * (w - leg), sz * (d - leg), leg, leg, FLOOR, leg_top));
        }
    }
    prims
}

fn wardrobe(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.60..0.93);
    let d = r.gen_range(0.35..0.60);
    let plinth_top = FLOOR + r.gen_range(0.05..0.15);
    let body_top = r.gen_range(0.70..CANONICAL_BOUND);
    vec![
        bx_span(0.0, 0.0, w * 0.92, d * 0.92, FLOOR, plinth_top),
        bx_span(0.0, 0.0, w, d, plinth_top, body_top),
    ]
}

fn sofa(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.70..0.93);
    let d = r.gen_range(0.45..0.65);
    let seat_top = FLOOR + r.gen_range(0.30..0.45);
    let back_top = seat_top + r.gen_range(0.30..0.50);
    let back_th = r.gen_range(0.08..0.15);
    let arm_w = r.gen_range(0.08..0.15);
    let arm_top = seat_top + r.gen_range(0.10..0.25);
    vec![
        bx_span(0.0, 0.0, w, d, FLOOR, seat_top),
        bx_span(0.0, -(d - back_th), w, back_th, seat_top, back_top),
        bx_span(-(w - arm_w), 0.0, arm_w, d, seat_top, arm_top),
        bx_span(w - arm_w, 0.0, arm_w, d, seat_top, arm_top),
    ]
}

fn lamp(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let pole_r = r.gen_range(0.03..0.07);
    let pole_top = r.gen_range(0.20..0.55);
    let base_r = r.gen_range(0.15..0.30);
    let base_h = r.gen_range(0.03..0.07);
    let shade_r = r.gen_range(0.25..0.45);
    let shade_hh = r.gen_range(0.10..0.22);
    vec![
        Primitive::Cylinder {
            center: [0.0, FLOOR + base_h, 0.0],
            radius: base_r,
            half_height: base_h,
        },
        Primitive::Cylinder {
            center: [0.0, (FLOOR + pole_top) / 2.0, 0.0],
            radius: pole_r,
            half_height: (pole_top - FLOOR) / 2.0,
        },
        Primitive::Cylinder {
            center: [0.0, pole_top + shade_hh, 0.0],
            radius: shade_r,
            half_height: shade_hh,
        },
    ]
}

fn shelf(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let w = r.gen_range(0.55..0.90);
    let d = r.gen_range(0.25..0.45);
    let top = r.gen_range(0.55..CANONICAL_BOUND);
    let panel = r.gen_range(0.03..0.06);
    let boards = r.gen_range(3..=5);
    let mut prims = vec![
        bx_span(-(w - panel), 0.0, panel, d, FLOOR, top),
        bx_span(w - panel, 0.0, panel, d, FLOOR, top),
        // Back panel.
        bx_span(0.0, -(d - panel), w, panel, FLOOR, top),
    ];
    for i in 0..boards {
        let y = FLOOR + (top - FLOOR) * (i as f64 + 0.5) / boards as f64;
        prims.push(bx([0.0, y, 0.0], [w, panel, d]));
    }
    prims
}
