//! Farthest point sampling, kNN patch extraction, Chamfer distance.

use super::{dist2, PointCloud};
use crate::error::{Error, Result};

/// Greedy FPS starting at index 0; each pick maximizes the minimum distance
/// to the selected set, ties broken by lowest index.
pub fn fps(points: &PointCloud, m: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m < 1 || m > n {
        return Err(Error::Contract(format!("fps: m={m} out of range 1..={n}")));
    }
    let mut picked = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = 0usize;
    picked.push(current);
    for _ in 1..m {
        let cp = points.points[current];
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(&points.points[i], &cp);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        picked.push(best);
        current = best;
    }
    Ok(picked)
}

/// Anchor-relative local patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// Patch centers in cloud coordinates.
    pub anchors: Vec<[f64; 3]>,
    /// For each anchor, k neighbor points relative to it, sorted by distance
    /// (ties by original index); the anchor itself appears as the zero vector.
    pub patches: Vec<Vec<[f64; 3]>>,
}

/// k nearest cloud points per anchor (the anchor itself counts, distance 0).
pub fn knn_patches(points: &PointCloud, anchors: &[[f64; 3]], k: usize) -> Result<PatchSet> {
    let n = points.len();
    if k < 1 || k > n {
        return Err(Error::Contract(format!("knn_patches: k={k} out of range 1..={n}")));
    }
    let mut patches = Vec::with_capacity(anchors.len());
    for a in anchors {
        let mut order: Vec<(f64, usize)> = points
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (dist2(p, a), i))
            .collect();
        order.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        let patch = order[..k]
            .iter()
            .map(|&(_, i)| {
                let p = points.points[i];
                [p[0] - a[0], p[1] - a[1], p[2] - a[2]]
            })
            .collect();
        patches.push(patch);
    }
    Ok(PatchSet { anchors: anchors.to_vec(), patches })
}

/// Symmetric mean squared nearest-neighbor distance.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let one_way = |from: &PointCloud, to: &PointCloud| {
        from.points
            .iter()
            .map(|p| {
                to.points
                    .iter()
                    .map(|q| dist2(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}
