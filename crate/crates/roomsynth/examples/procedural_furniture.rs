//! The procedural CSG furniture corpus: styled solids, analytic occupancy,
//! and OBJ export for inspection.

use roomsynth::geometry::{export_solid_obj, make_furniture, occupancy};

fn main() {
    let out = std::env::temp_dir().join("roomsynth_furniture");
    std::fs::create_dir_all(&out).unwrap();
    for category in ["bed", "nightstand", "wardrobe", "table", "chair", "sofa", "lamp", "shelf"] {
        for style in 0..2u64 {
            let solid = make_furniture(category, style).unwrap();
            let (lo, hi) = solid.bounding_box();
            let inside = occupancy(&solid, &[0.0, lo[1] + 0.05, 0.0]);
            let path = out.join(format!("{category}_{style}.obj"));
            export_solid_obj(&solid, &path).unwrap();
            println!(
                "{category:10} style {style}: {} primitives, bbox y [{:+.2}, {:+.2}], occupied near floor: {}",
                solid.primitives.len(),
                lo[1],
                hi[1],
                inside == 1.0
            );
        }
    }
    println!("OBJ files in {}", out.display());
}
