//! Train a small shape codec on a handful of solids and reconstruct one of
//! them as an occupancy grid. Runs in a couple of minutes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomsynth::geometry::{export_grid_obj, make_furniture, occupancy};
use roomsynth::shape_codec::{prepare_shape, train_codec, CodecConfig, TrainOptions};

fn main() {
    let mut config = CodecConfig::desk();
    config.epochs = 120;
    config.warmup_epochs = 70;

    let shapes: Vec<_> = ["table", "chair", "bed", "lamp"]
        .iter()
        .map(|c| make_furniture(c, 0).unwrap())
        .collect();

    let t0 = std::time::Instant::now();
    let (model, rows) = train_codec(&shapes, &config, 1, TrainOptions::default()).unwrap();
    println!(
        "trained {} steps in {:.0?}; occupancy loss {:.3} -> {:.3}",
        rows.len(),
        t0.elapsed(),
        rows.first().unwrap().occupancy,
        rows.last().unwrap().occupancy,
    );

    // Encode + quantize the chair, reconstruct, report IoU vs the analytic field.
    let entry = prepare_shape(&shapes[1], &config, 1, 1).unwrap();
    let latents = model.encode_quantize(&entry.cloud).unwrap();
    let distinct: std::collections::BTreeSet<usize> = latents.codes().iter().copied().collect();
    println!("chair encoded as {} anchors using {} distinct codes", latents.len(), distinct.len());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..10_000 {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let pred = model.decode_probs(&latents, &[p]).unwrap()[0] >= 0.5;
        let truth = occupancy(&shapes[1], &p) == 1.0;
        if pred && truth {
            inter += 1;
        }
        if pred || truth {
            union += 1;
        }
    }
    println!("reconstruction IoU: {:.3}", inter as f64 / union.max(1) as f64);

    let grid = model.reconstruct_grid(&latents, 48).unwrap();
    let path = std::env::temp_dir().join("roomsynth_chair_reconstruction.obj");
    export_grid_obj(&grid, 0.5, &path).unwrap();
    println!("reconstruction exported to {}", path.display());
}
