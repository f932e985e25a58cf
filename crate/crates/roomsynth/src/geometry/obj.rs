//! Wavefront OBJ export: one axis-aligned cuboid per boundary voxel (grids)
//! or per primitive (solids). Purely for inspection in external viewers.

use std::fmt::Write as _;
use std::path::Path;

use super::grid::{boundary_voxels, OccupancyGrid};
use super::solids::FurnitureSolid;
use crate::error::Result;

fn push_cuboid(out: &mut String, lo: [f64; 3], hi: [f64; 3], base: usize) {
    for &x in &[lo[0], hi[0]] {
        for &y in &[lo[1], hi[1]] {
            for &z in &[lo[2], hi[2]] {
                writeln!(out, "v {x:.6} {y:.6} {z:.6}").unwrap();
            }
        }
    }
    // Vertex order: index bit 2 = x, bit 1 = y, bit 0 = z (0 = lo).
    const FACES: [[usize; 4]; 6] = [
        [0, 1, 3, 2], // -x
        [4, 6, 7, 5], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 2, 6, 4], // -z
        [1, 5, 7, 3], // +z
    ];
    for f in FACES {
        writeln!(out, "f {} {} {} {}", base + f[0] + 1, base + f[1] + 1, base + f[2] + 1, base + f[3] + 1)
            .unwrap();
    }
}

/// Cuboids for every boundary voxel at `threshold`.
pub fn export_grid_obj(grid: &OccupancyGrid, threshold: f64, path: &Path) -> Result<()> {
    let mut out = String::new();
    let pitch = grid.pitch();
    for (i, (vi, vj, vk)) in boundary_voxels(grid, threshold).into_iter().enumerate() {
        let c = grid.center(vi, vj, vk);
        let lo = [c[0] - pitch / 2.0, c[1] - pitch / 2.0, c[2] - pitch / 2.0];
        let hi = [c[0] + pitch / 2.0, c[1] + pitch / 2.0, c[2] + pitch / 2.0];
        push_cuboid(&mut out, lo, hi, i * 8);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One bounding cuboid per primitive.
pub fn export_solid_obj(solid: &FurnitureSolid, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, prim) in solid.primitives.iter().enumerate() {
        let (lo, hi) = prim.bounding_box();
        push_cuboid(&mut out, lo, hi, i * 8);
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("roomsynth_{}_{name}", std::process::id()))
    }

    #[test]
    fn single_voxel_has_8_vertices_6_faces() {
        let r = 3;
        let mut values = vec![0.0; r * r * r];
        values[(1 * r + 1) * r + 1] = 1.0;
        let grid = OccupancyGrid::new(r, values);
        let path = tmp("single_voxel.obj");
        export_grid_obj(&grid, 0.5, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 6);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn vertex_count_is_8_per_boundary_voxel() {
        let r = 4;
        let grid = OccupancyGrid::new(r, vec![1.0; r * r * r]);
        let boundary = boundary_voxels(&grid, 0.5).len();
        let path = tmp("shell.obj");
        export_grid_obj(&grid, 0.5, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 8 * boundary);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn re_export_is_byte_identical() {
        let solid = crate::geometry::make_furniture("shelf", 21).unwrap();
        let p1 = tmp("shelf_a.obj");
        let p2 = tmp("shelf_b.obj");
        export_solid_obj(&solid, &p1).unwrap();
        export_solid_obj(&solid, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
    }
}
