//! Scene JSON schema and lossless (de)serialization. One scene per line in
//! corpus files; floor cells are run-length encoded.

use serde::{Deserialize, Serialize};

use super::{FloorPlanMask, FurnitureInstance, Scene};
use crate::error::{Error, Result};
use crate::shape_codec::AnchorLatentSet;

#[derive(Serialize, Deserialize)]
struct SceneWire {
    room_type: String,
    floor: FloorWire,
    furniture: Vec<FurnitureWire>,
}

#[derive(Serialize, Deserialize)]
struct FloorWire {
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    cells: String,
    transform: [f64; 6],
}

#[derive(Serialize, Deserialize)]
struct FurnitureWire {
    category: String,
    t: [f64; 3],
    s: [f64; 3],
    r: f64,
    anchors: Vec<[f64; 3]>,
    codes: Vec<usize>,
}

/// Run lengths of alternating cell values starting with zeros, e.g.
/// "2,3,1" = 0,0,1,1,1,0.
fn rle_encode(cells: &[u8]) -> String {
    let mut runs: Vec<usize> = Vec::new();
    let mut current = 0u8;
    let mut len = 0usize;
    for &c in cells {
        if c == current {
            len += 1;
        } else {
            runs.push(len);
            current = c;
            len = 1;
        }
    }
    runs.push(len);
    runs.iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn rle_decode(text: &str, expected: usize) -> Result<Vec<u8>> {
    let mut cells = Vec::with_capacity(expected);
    let mut value = 0u8;
    for part in text.split(',') {
        let run: usize = part
            .parse()
            .map_err(|_| Error::Data(format!("floor.cells: bad run length {part:?}")))?;
        cells.extend(std::iter::repeat(value).take(run));
        value = 1 - value;
    }
    if cells.len() != expected {
        return Err(Error::Data(format!(
            "floor.cells: decoded {} cells, expected {expected}",
            cells.len()
        )));
    }
    Ok(cells)
}

/// Compact single-line JSON; byte-identical across re-serializations.
pub fn scene_to_json(scene: &Scene) -> String {
    let wire = SceneWire {
        room_type: scene.room_type.clone(),
        floor: FloorWire {
            h: scene.floor.h,
            w: scene.floor.w,
            cells: rle_encode(&scene.floor.cells),
            transform: scene.floor.transform,
        },
        furniture: scene
            .furniture
            .iter()
            .map(|inst| FurnitureWire {
                category: inst.category.clone(),
                t: inst.translation,
                s: inst.size,
                r: inst.yaw,
                anchors: inst.shape.anchors().to_vec(),
                codes: inst.shape.codes().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&wire).expect("scene serializes")
}

/// Standalone floor-mask JSON with the same schema as the scene's floor
/// section.
pub fn mask_to_json(mask: &FloorPlanMask) -> String {
    let wire = FloorWire {
        h: mask.h,
        w: mask.w,
        cells: rle_encode(&mask.cells),
        transform: mask.transform,
    };
    serde_json::to_string(&wire).expect("mask serializes")
}

pub fn mask_from_json(text: &str) -> Result<FloorPlanMask> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let wire: FloorWire = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Data(format!("mask JSON: {} at {}", e.inner(), e.path())))?;
    let cells = rle_decode(&wire.cells, wire.h * wire.w)?;
    Ok(FloorPlanMask { h: wire.h, w: wire.w, cells, transform: wire.transform })
}

/// Parse errors name the offending path, e.g. "furniture[0].category".
pub fn scene_from_json(text: &str) -> Result<Scene> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let wire: SceneWire = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Data(format!("scene JSON: {} at {}", e.inner(), e.path())))?;
    let cells = rle_decode(&wire.floor.cells, wire.floor.h * wire.floor.w)?;
    let mut furniture = Vec::with_capacity(wire.furniture.len());
    for (i, f) in wire.furniture.into_iter().enumerate() {
        if f.anchors.len() != f.codes.len() {
            return Err(Error::Data(format!(
                "furniture[{i}]: {} anchors vs {} codes",
                f.anchors.len(),
                f.codes.len()
            )));
        }
        furniture.push(FurnitureInstance {
            category: f.category,
            translation: f.t,
            size: f.s,
            yaw: f.r,
            shape: AnchorLatentSet::from_parts(f.anchors, f.codes),
        });
    }
    Ok(Scene {
        room_type: wire.room_type,
        floor: FloorPlanMask {
            h: wire.floor.h,
            w: wire.floor.w,
            cells,
            transform: wire.floor.transform,
        },
        furniture,
    })
}
