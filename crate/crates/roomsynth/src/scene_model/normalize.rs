//! Affine attribute normalization to [-1, 1] from corpus min/max statistics.

use serde::{Deserialize, Serialize};

use super::{FurnitureInstance, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub t_min: [f64; 3],
    pub t_max: [f64; 3],
    pub s_min: [f64; 3],
    pub s_max: [f64; 3],
}

impl CorpusStats {
    pub fn from_scenes(scenes: &[Scene]) -> Result<Self> {
        let mut stats = CorpusStats {
            t_min: [f64::INFINITY; 3],
            t_max: [f64::NEG_INFINITY; 3],
            s_min: [f64::INFINITY; 3],
            s_max: [f64::NEG_INFINITY; 3],
        };
        let mut any = false;
        for scene in scenes {
            for inst in &scene.furniture {
                any = true;
                for i in 0..3 {
                    stats.t_min[i] = stats.t_min[i].min(inst.translation[i]);
                    stats.t_max[i] = stats.t_max[i].max(inst.translation[i]);
                    stats.s_min[i] = stats.s_min[i].min(inst.size[i]);
                    stats.s_max[i] = stats.s_max[i].max(inst.size[i]);
                }
            }
        }
        if !any {
            return Err(Error::Data("cannot compute stats of an empty corpus".to_string()));
        }
        Ok(stats)
    }
}

fn norm_one(x: f64, min: f64, max: f64, what: &str) -> f64 {
    if max - min < 1e-12 {
        return 0.0;
    }
    let clamped = if x < min || x > max {
        eprintln!("warning: {what} value {x} outside recorded range [{min}, {max}], clamping");
        x.clamp(min, max)
    } else {
        x
    };
    2.0 * (clamped - min) / (max - min) - 1.0
}

fn denorm_one(n: f64, min: f64, max: f64) -> f64 {
    min + (n + 1.0) / 2.0 * (max - min)
}

/// Normalized (t, s, r) for one instance: t and s affinely into [-1,1] from
/// the stats, yaw as r/pi.
pub fn normalize_instance(inst: &FurnitureInstance, stats: &CorpusStats) -> ([f64; 3], [f64; 3], f64) {
    let mut t = [0.0; 3];
    let mut s = [0.0; 3];
    for i in 0..3 {
        t[i] = norm_one(inst.translation[i], stats.t_min[i], stats.t_max[i], "translation");
        s[i] = norm_one(inst.size[i], stats.s_min[i], stats.s_max[i], "size");
    }
    (t, s, inst.yaw / std::f64::consts::PI)
}

/// Inverse of `normalize_instance` for sampled attribute vectors.
pub fn denormalize_instance(
    t: &[f64; 3],
    s: &[f64; 3],
    r: f64,
    stats: &CorpusStats,
) -> ([f64; 3], [f64; 3], f64) {
    let mut dt = [0.0; 3];
    let mut ds = [0.0; 3];
    for i in 0..3 {
        dt[i] = denorm_one(t[i], stats.t_min[i], stats.t_max[i]);
        ds[i] = denorm_one(s[i], stats.s_min[i], stats.s_max[i]);
    }
    (dt, ds, super::wrap_angle(r * std::f64::consts::PI))
}
