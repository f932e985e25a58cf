//! Procedural watertight furniture with analytic occupancy, point-cloud
//! processing (surface sampling, FPS, kNN patches, Chamfer distance),
//! occupancy grids, OBJ export, and the yaw-OBB collision primitive.
//!
//! Conventions: y is up; object canonical frames live in [-1, 1]^3 with all
//! solid geometry inside [-0.95, 0.95]^3; furniture footprints rotate about
//! the vertical axis only.

mod grid;
mod obb;
mod obj;
mod points;
mod solids;

pub use grid::{extract_boundary_points, OccupancyGrid};
pub use obb::{obbs_collide, point_in_obb, YawObb};
pub use obj::{export_grid_obj, export_solid_obj};
pub use points::{chamfer, fps, knn_patches, PatchSet};
pub use solids::{make_furniture, occupancy, sample_surface, FurnitureSolid, Primitive, CANONICAL_BOUND};

/// n points in R^3.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        assert!(!points.is_empty(), "point cloud must be non-empty");
        assert!(
            points.iter().all(|p| p.iter().all(|c| c.is_finite())),
            "point cloud has non-finite coordinates"
        );
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
