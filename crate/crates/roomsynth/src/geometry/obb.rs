//! Yaw-rotated oriented bounding boxes: 2-D separating-axis footprint test
//! in the x-z plane plus vertical interval overlap. Furniture only rotates
//! about the vertical axis, so four candidate axes suffice.

/// Box centered at `center` with half-extents `half`, footprint rotated by
/// `yaw` radians about the vertical (y) axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawObb {
    pub center: [f64; 3],
    pub half: [f64; 3],
    pub yaw: f64,
}

impl YawObb {
    /// Footprint axes in the x-z plane.
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Half-projection of the footprint onto a unit axis.
    fn radius_on(&self, axis: &[f64; 2]) -> f64 {
        let [a1, a2] = self.axes();
        self.half[0] * (a1[0] * axis[0] + a1[1] * axis[1]).abs()
            + self.half[2] * (a2[0] * axis[0] + a2[1] * axis[1]).abs()
    }
}

/// True when the boxes interpenetrate by more than `eps` on every candidate
/// separating axis (including the vertical interval).
pub fn obbs_collide(a: &YawObb, b: &YawObb, eps: f64) -> bool {
    let dy = (a.center[1] - b.center[1]).abs();
    if a.half[1] + b.half[1] - dy <= eps {
        return false;
    }
    let delta = [b.center[0] - a.center[0], b.center[2] - a.center[2]];
    let mut axes = Vec::with_capacity(4);
    axes.extend_from_slice(&a.axes());
    axes.extend_from_slice(&b.axes());
    for axis in &axes {
        let dist = (delta[0] * axis[0] + delta[1] * axis[1]).abs();
        let overlap = a.radius_on(axis) + b.radius_on(axis) - dist;
        if overlap <= eps {
            return false;
        }
    }
    true
}

/// Point-in-OBB test (boundary inclusive), used by the sampling oracle and
/// the corpus placer.
pub fn point_in_obb(p: &[f64; 3], obb: &YawObb) -> bool {
    if (p[1] - obb.center[1]).abs() > obb.half[1] {
        return false;
    }
    let dx = p[0] - obb.center[0];
    let dz = p[2] - obb.center[2];
    let (s, c) = obb.yaw.sin_cos();
    // Rotate the offset into the box frame.
    let local_x = dx * c + dz * s;
    let local_z = -dx * s + dz * c;
    local_x.abs() <= obb.half[0] && local_z.abs() <= obb.half[2]
}
