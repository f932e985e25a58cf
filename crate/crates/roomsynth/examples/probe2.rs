// Scratch probe: stage-two training speed and metric quality.
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomsynth::evaluation::*;
use roomsynth::geometry::make_furniture;
use roomsynth::scene_generator::*;
use roomsynth::scene_model::*;
use roomsynth::shape_codec::*;

fn main() {
    let t0 = std::time::Instant::now();
    // Fast codec: fewer epochs than the acceptance run, same architecture.
    let mut cc = CodecConfig::desk();
    cc.epochs = 140;
    cc.warmup_epochs = 80;
    cc.lr = 3e-3;
    let cats = ["bed", "nightstand", "wardrobe", "table", "chair", "sofa", "lamp", "shelf"];
    let shapes: Vec<_> = (0..50)
        .map(|i| make_furniture(cats[i % 8], (i / 8) as u64).unwrap())
        .collect();
    let (codec, _) = train_codec(&shapes, &cc, 7, TrainOptions::default()).unwrap();
    eprintln!("[{:.0?}] codec trained", t0.elapsed());

    let spec = CorpusSpec::default();
    let mut sc = SceneCodec::new(&codec);
    let scenes = generate_corpus(&spec, &mut sc, 500, 11).unwrap();
    eprintln!("[{:.0?}] corpus of {} scenes", t0.elapsed(), scenes.len());

    let stats = CorpusStats::from_scenes(&scenes).unwrap();
    let mut gc = GeneratorConfig::desk();
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    gc.epochs = epochs;
    gc.lr = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    gc.shape_ff = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(256);
    gc.shape_loss_scale = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let t1 = std::time::Instant::now();
    let (model, rows) = train_scene(
        &scenes,
        stats,
        CategoryTable::desk(),
        codec.manifest_hash(),
        &gc,
        13,
        SceneTrainOptions::default(),
    )
    .unwrap();
    let per_epoch = t1.elapsed().as_secs_f64() / epochs as f64;
    eprintln!(
        "[{:.0?}] scene model: {} epochs at {:.1}s/epoch",
        t0.elapsed(),
        epochs,
        per_epoch
    );
    for r in rows.iter().step_by(rows.len() / 12 + 1) {
        eprintln!("  step {:4} layout {:.3} shape {:.3}", r.step, r.layout, r.shape);
    }
    if let Some(r) = rows.last() {
        eprintln!("  final step {} layout {:.3} shape {:.3}", r.step, r.layout, r.shape);
    }

    // Teacher-forced code accuracy on corpus scenes whose context already
    // shows the target's category: measures style copying directly.
    {
        let mut correct = 0usize;
        let mut total = 0usize;
        for scene in scenes.iter().take(40) {
            // Pick a chair target whose context keeps another chair.
            let chairs: Vec<usize> = (0..scene.furniture.len())
                .filter(|&i| scene.furniture[i].category == "chair")
                .collect();
            if chairs.len() < 2 {
                continue;
            }
            let target_idx = chairs[0];
            let context: Vec<&FurnitureInstance> = scene
                .furniture
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != target_idx)
                .map(|(_, f)| f)
                .collect();
            let v = {
                let (t, s, r) = normalize_instance(&scene.furniture[target_idx], &model.stats);
                AttributeValues {
                    category: model.categories.index_of("chair").unwrap(),
                    translation: t,
                    rotation: r,
                    size: s,
                }
            };
            let mut tape = roomsynth::numerics::Tape::new();
            let floor = encode_floor(&mut tape, &model.params, &model.config, &scene.floor).unwrap();
            let toks: Vec<_> = context
                .iter()
                .map(|f| {
                    let (t, s, r) = normalize_instance(f, &model.stats);
                    furniture_token(
                        &mut tape,
                        &model.params,
                        &model.config,
                        model.categories.index_of(&f.category).unwrap(),
                        model.categories.len(),
                        &t,
                        r,
                        &s,
                        &f.shape,
                    )
                    .unwrap()
                })
                .collect();
            let qhat = scene_forward(&mut tape, &model.params, &model.config, floor, &toks);
            let cond = shape_condition(&mut tape, model.categories.len(), qhat, &v);
            let sp = shape_teacher_forward(
                &mut tape,
                &model.params,
                &model.config,
                cond,
                &scene.furniture[target_idx].shape,
            )
            .unwrap();
            let logits = tape.data(sp.id_logits).to_vec();
            let d = model.config.codebook_size;
            for (i, &code) in scene.furniture[target_idx].shape.codes().iter().enumerate() {
                let row = &logits[i * d..(i + 1) * d];
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if argmax == code {
                    correct += 1;
                }
                total += 1;
            }
        }
        eprintln!(
            "  teacher-forced chair code accuracy: {:.3} ({correct}/{total})",
            correct as f64 / total.max(1) as f64
        );
    }

    // Metrics over 100 generated scenes from held-out masks.
    let masks: Vec<FloorPlanMask> = scenes[490..].iter().map(|s| s.floor.clone()).collect();
    let t2 = std::time::Instant::now();
    let mut generated = Vec::new();
    let mut inside = 0usize;
    let mut total_objects = 0usize;
    for i in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let s = generate_scene(&masks[i % masks.len()], &model, &mut rng, 13, 1.0).unwrap();
        for f in &s.furniture {
            total_objects += 1;
            if s.floor.contains_world(f.translation[0], f.translation[2]) {
                inside += 1;
            }
        }
        generated.push(s);
    }
    eprintln!("[{:.0?}] generated 100 scenes in {:.1?}", t0.elapsed(), t2.elapsed());
    let counts: Vec<usize> = generated.iter().map(|s| s.furniture.len()).collect();
    eprintln!(
        "  object counts: min {} max {} mean {:.1}",
        counts.iter().min().unwrap(),
        counts.iter().max().unwrap(),
        counts.iter().sum::<usize>() as f64 / 100.0
    );
    let non_empty: Vec<Scene> =
        generated.iter().filter(|s| !s.furniture.is_empty()).cloned().collect();
    let (coll, _) = collision_rate(&non_empty).unwrap();
    let ckl = category_kl(&generated, &scenes).unwrap();
    eprintln!("  collision {coll:.3}  ckl {ckl:.4}  in-mask {:.3}", inside as f64 / total_objects as f64);

    // Within generated scenes: how often do two chairs share codes?
    {
        let mut match_fracs = Vec::new();
        for s in &generated {
            let chairs: Vec<_> = s.furniture.iter().filter(|f| f.category == "chair").collect();
            for i in 0..chairs.len() {
                for j in i + 1..chairs.len() {
                    let same = chairs[i]
                        .shape
                        .codes()
                        .iter()
                        .zip(chairs[j].shape.codes())
                        .filter(|(a, b)| a == b)
                        .count();
                    match_fracs.push(same as f64 / chairs[i].shape.codes().len() as f64);
                }
            }
        }
        if !match_fracs.is_empty() {
            eprintln!(
                "  generated within-scene chair code match: {:.3} over {} pairs",
                match_fracs.iter().sum::<f64>() / match_fracs.len() as f64,
                match_fracs.len()
            );
        }
    }

    let t3 = std::time::Instant::now();
    match within_scene_consistency(&generated, "chair", &codec) {
        Ok((cd, b)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let base = cross_scene_baseline(&generated, "chair", &codec, 60, &mut rng).unwrap();
            eprintln!(
                "  consistency CD {cd:.4} over {} scenes vs cross-scene {base:.4} (ratio {:.2})",
                b.len(),
                cd / base
            );
        }
        Err(e) => eprintln!("  consistency undefined: {e}"),
    }
    match cross_run_diversity(&masks, &model, &codec, 10, "chair", 13, 99) {
        Ok((d, b)) => eprintln!("  diversity {d:.4} over {} masks", b.len()),
        Err(e) => eprintln!("  diversity undefined: {e}"),
    }
    eprintln!("[{:.0?}] metrics done (metrics took {:.1?})", t0.elapsed(), t3.elapsed());
}
