//! Miniature end-to-end pipeline: codec training, corpus authoring, joint
//! scene/shape training, then generation and completion. Sizes are trimmed
//! so the whole run takes a few minutes; quality is accordingly rough — the
//! acceptance suite runs the full desk-scale version.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomsynth::geometry::make_furniture;
use roomsynth::scene_generator::{
    complete_scene, generate_scene, train_scene, GeneratorConfig, SceneTrainOptions,
};
use roomsynth::scene_model::{
    generate_corpus, scene_to_json, CategoryTable, CorpusSpec, CorpusStats, SceneCodec,
};
use roomsynth::shape_codec::{train_codec, CodecConfig, TrainOptions};

fn main() {
    let t0 = std::time::Instant::now();

    // Stage one: codec on a small style pool.
    let mut codec_config = CodecConfig::desk();
    codec_config.epochs = 100;
    codec_config.warmup_epochs = 60;
    let cats = ["bed", "nightstand", "wardrobe", "table", "chair", "sofa", "lamp", "shelf"];
    let shapes: Vec<_> = (0..24)
        .map(|i| make_furniture(cats[i % 8], (i / 8) as u64).unwrap())
        .collect();
    let (codec, _) = train_codec(&shapes, &codec_config, 1, TrainOptions::default()).unwrap();
    println!("[{:.0?}] codec ready", t0.elapsed());

    // Corpus with a matching small style pool.
    let spec = CorpusSpec { styles_per_category: 3, ..CorpusSpec::default() };
    let mut scene_codec = SceneCodec::new(&codec);
    let scenes = generate_corpus(&spec, &mut scene_codec, 80, 2).unwrap();
    println!("[{:.0?}] corpus of {} scenes", t0.elapsed(), scenes.len());

    // Stage two, briefly.
    let stats = CorpusStats::from_scenes(&scenes).unwrap();
    let mut gen_config = GeneratorConfig::desk();
    gen_config.epochs = 10;
    let (model, rows) = train_scene(
        &scenes,
        stats,
        CategoryTable::desk(),
        codec.manifest_hash(),
        &gen_config,
        3,
        SceneTrainOptions::default(),
    )
    .unwrap();
    println!(
        "[{:.0?}] scene model: layout loss {:.2} -> {:.2}",
        t0.elapsed(),
        rows.first().unwrap().layout,
        rows.last().unwrap().layout
    );

    // Generate from a held-out mask.
    let mask = &scenes[79].floor;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let generated = generate_scene(mask, &model, &mut rng, 13, 1.0).unwrap();
    println!(
        "[{:.0?}] generated {} objects: {:?}",
        t0.elapsed(),
        generated.furniture.len(),
        generated.furniture.iter().map(|f| f.category.as_str()).collect::<Vec<_>>()
    );

    // Complete a partial scene (first two objects of a corpus scene).
    let mut partial = scenes[5].clone();
    partial.furniture.truncate(2);
    let completed = complete_scene(&partial, &model, &mut rng, 13, 1.0).unwrap();
    println!(
        "[{:.0?}] completed a 2-object partial scene to {} objects",
        t0.elapsed(),
        completed.furniture.len()
    );

    let out = std::env::temp_dir().join("roomsynth_generated_scene.json");
    std::fs::write(&out, scene_to_json(&generated) + "\n").unwrap();
    println!("scene JSON written to {}", out.display());
}
