//! Occupancy grids over [-1,1]^3 and boundary-voxel surface extraction.

use super::PointCloud;
use crate::error::{Error, Result};

/// R^3 values in [0,1] at voxel centers spanning [-1,1]^3.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(resolution: usize, values: Vec<f64>) -> Self {
        assert!(resolution >= 1);
        assert_eq!(values.len(), resolution * resolution * resolution);
        assert!(
            values.iter().all(|v| (0.0..=1.0).contains(v)),
            "grid values must lie in [0,1]"
        );
        OccupancyGrid { resolution, values }
    }

    pub fn pitch(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    /// Center of voxel (i, j, k), indices on x, y, z.
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let p = self.pitch();
        [
            -1.0 + (i as f64 + 0.5) * p,
            -1.0 + (j as f64 + 0.5) * p,
            -1.0 + (k as f64 + 0.5) * p,
        ]
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let r = self.resolution;
        self.values[(i * r + j) * r + k]
    }

    /// All voxel centers in index order, for batch decoding.
    pub fn centers(resolution: usize) -> Vec<[f64; 3]> {
        let p = 2.0 / resolution as f64;
        let mut out = Vec::with_capacity(resolution * resolution * resolution);
        for i in 0..resolution {
            for j in 0..resolution {
                for k in 0..resolution {
                    out.push([
                        -1.0 + (i as f64 + 0.5) * p,
                        -1.0 + (j as f64 + 0.5) * p,
                        -1.0 + (k as f64 + 0.5) * p,
                    ]);
                }
            }
        }
        out
    }
}

/// Indices (on x, y, z) of voxels >= threshold with at least one of six face
/// neighbors below it; the domain boundary counts as below.
pub(crate) fn boundary_voxels(grid: &OccupancyGrid, threshold: f64) -> Vec<(usize, usize, usize)> {
    let r = grid.resolution;
    let below = |i: isize, j: isize, k: isize| -> bool {
        if i < 0 || j < 0 || k < 0 || i >= r as isize || j >= r as isize || k >= r as isize {
            return true;
        }
        grid.at(i as usize, j as usize, k as usize) < threshold
    };
    let mut out = Vec::new();
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                if grid.at(i, j, k) < threshold {
                    continue;
                }
                let (ii, jj, kk) = (i as isize, j as isize, k as isize);
                let exposed = below(ii - 1, jj, kk)
                    || below(ii + 1, jj, kk)
                    || below(ii, jj - 1, kk)
                    || below(ii, jj + 1, kk)
                    || below(ii, jj, kk - 1)
                    || below(ii, jj, kk + 1);
                if exposed {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

/// Centers of boundary voxels; the surface proxy for decoded shapes.
pub fn extract_boundary_points(grid: &OccupancyGrid, threshold: f64) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::Contract(format!(
            "extract_boundary_points: threshold {threshold} outside (0,1)"
        )));
    }
    if !grid.values.iter().any(|&v| v >= threshold) {
        return Err(Error::Contract(
            "extract_boundary_points: no voxel above threshold (empty shape)".to_string(),
        ));
    }
    let pts: Vec<[f64; 3]> = boundary_voxels(grid, threshold)
        .into_iter()
        .map(|(i, j, k)| grid.center(i, j, k))
        .collect();
    Ok(PointCloud::new(pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{occupancy, FurnitureSolid, Primitive};

    #[test]
    fn all_ones_grid_yields_outer_shell() {
        let r = 6;
        let grid = OccupancyGrid::new(r, vec![1.0; r * r * r]);
        let pts = extract_boundary_points(&grid, 0.5).unwrap();
        let interior = (r - 2) * (r - 2) * (r - 2);
        assert_eq!(pts.len(), r * r * r - interior);
    }

    #[test]
    fn single_interior_voxel() {
        let r = 5;
        let mut values = vec![0.0; r * r * r];
        values[(2 * r + 2) * r + 2] = 1.0;
        let grid = OccupancyGrid::new(r, values);
        let pts = extract_boundary_points(&grid, 0.5).unwrap();
        assert_eq!(pts.points, vec![grid.center(2, 2, 2)]);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let grid = OccupancyGrid::new(4, vec![0.0; 64]);
        assert!(extract_boundary_points(&grid, 0.5).is_err());
    }

    #[test]
    fn rasterized_box_boundary_is_near_true_surface() {
        let half = [0.6, 0.35, 0.5];
        let solid = FurnitureSolid {
            category: "table".to_string(),
            primitives: vec![Primitive::Box { center: [0.0; 3], half }],
        };
        let r = 64;
        let values: Vec<f64> = OccupancyGrid::centers(r)
            .iter()
            .map(|c| occupancy(&solid, c))
            .collect();
        let grid = OccupancyGrid::new(r, values);
        let pts = extract_boundary_points(&grid, 0.5).unwrap();
        // Hausdorff distance to the analytic box surface within 1.5 pitches.
        let pitch = grid.pitch();
        let surf_dist = |p: &[f64; 3]| -> f64 {
            // Distance from a point inside the box to its surface.
            let dx = half[0] - p[0].abs();
            let dy = half[1] - p[1].abs();
            let dz = half[2] - p[2].abs();
            dx.min(dy).min(dz)
        };
        for p in &pts.points {
            let d = surf_dist(p);
            assert!(
                d.abs() <= 1.5 * pitch,
                "boundary voxel {p:?} is {d} from the surface (pitch {pitch})"
            );
        }
    }
}
