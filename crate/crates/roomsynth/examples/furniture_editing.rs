//! Furniture-level editing: mix the anchor latents of two styled solids
//! inside a region and decode the blend into a new shape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomsynth::geometry::{export_grid_obj, make_furniture, sample_surface};
use roomsynth::scene_generator::mix_anchor_latents;
use roomsynth::shape_codec::{train_codec, CodecConfig, TrainOptions};

fn main() {
    let mut config = CodecConfig::desk();
    config.epochs = 100;
    config.warmup_epochs = 60;
    let solids = vec![
        make_furniture("chair", 0).unwrap(),
        make_furniture("chair", 5).unwrap(),
    ];
    let (codec, _) = train_codec(&solids, &config, 4, TrainOptions::default()).unwrap();

    let mut encode = |i: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = sample_surface(&solids[i], config.n_surface, &mut rng).unwrap();
        codec.encode_quantize(&cloud).unwrap()
    };
    let a = encode(0, 10);
    let b = encode(1, 11);

    // Take the upper half (the back and seat region) from shape B.
    let mixed = mix_anchor_latents(&a, &b, [-1.0, -0.1, -1.0], [1.0, 1.0, 1.0]).unwrap();
    println!(
        "a: {} anchors, b: {} anchors, mixed: {} anchors",
        a.len(),
        b.len(),
        mixed.len()
    );

    let out = std::env::temp_dir().join("roomsynth_edit");
    std::fs::create_dir_all(&out).unwrap();
    for (name, latents) in [("a", &a), ("b", &b), ("mixed", &mixed)] {
        let grid = codec.reconstruct_grid(latents, 40).unwrap();
        let path = out.join(format!("chair_{name}.obj"));
        export_grid_obj(&grid, 0.5, &path).unwrap();
        println!("wrote {}", path.display());
    }
}
