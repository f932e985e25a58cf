//! Command-line front end: corpus generation, the two training stages,
//! generation/completion/correction/editing, and evaluation. Every command
//! is a pure function of (config, inputs, seed); outputs are never silently
//! overwritten.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::evaluation::{
    category_kl, collision_rate, cross_run_diversity, within_scene_consistency, MetricReport,
};
use crate::geometry::{export_grid_obj, make_furniture, FurnitureSolid};
use crate::scene_generator::{
    complete_scene, correct_mismatch, generate_scene, mix_anchor_latents, GeneratorModel,
};
use crate::scene_model::{
    generate_corpus, mask_from_json, scene_from_json, scene_to_json, CategoryTable, CorpusStats,
    FloorPlanMask, Scene, SceneCodec, CONTENT_CATEGORIES,
};
use crate::shape_codec::{train_codec, AnchorLatentSet, CodecModel, TrainOptions};

#[derive(Parser)]
#[command(name = "roomsynth", version, about = "Two-stage indoor scene synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural corpus (shape list or scene NDJSON) plus a stats
    /// sidecar.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Train the anchor-latent shape codec on a shape corpus.
    TrainCodec {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs; resume later with --resume.
        #[arg(long)]
        stop_after_epochs: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train the scene generator on a scene corpus (requires the codec the
    /// corpus was encoded with).
    TrainScene {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs; resume later with --resume.
        #[arg(long)]
        stop_after_epochs: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Generate a scene conditioned on a floor mask.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Floor-mask JSON file.
        #[arg(long, conflicts_with = "mask_from_scene")]
        mask: Option<PathBuf>,
        /// Scene (ND)JSON path, optionally ":<line>"; the scene's floor is
        /// used.
        #[arg(long)]
        mask_from_scene: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write one OBJ per generated object (needs --codec).
        #[arg(long)]
        obj_dir: Option<PathBuf>,
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long, default_value_t = 13)]
        max_objects: usize,
        #[arg(long)]
        force: bool,
    },
    /// Complete a partially furnished scene.
    Complete {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        partial: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        max_objects: usize,
        #[arg(long)]
        force: bool,
    },
    /// Flag low-likelihood objects and resample their shapes.
    Correct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        threshold_pct: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Mix the anchor latents of two styled shapes inside a region and
    /// decode the blend.
    Edit {
        #[arg(long)]
        codec: PathBuf,
        /// JSON file: {"category": "...", "style_seed": N}.
        #[arg(long)]
        shape_a: PathBuf,
        #[arg(long)]
        shape_b: PathBuf,
        /// "x0,y0,z0:x1,y1,z1" axis-aligned box.
        #[arg(long, allow_hyphen_values = true)]
        region: String,
        /// Output prefix; writes <out>.json and <out>.obj.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate scenes from held-out masks and run the selected metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subset of collision,ckl,consistency,diversity.
        #[arg(long, default_value = "collision,ckl,consistency,diversity")]
        metrics: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

pub fn run() -> i32 {
    if let Ok(threads) = std::env::var("RD_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out, count, seed, force } => {
            cmd_gen_data(&config, &out, count, seed, force)
        }
        Command::TrainCodec { config, data, out, seed, resume, stop_after_epochs, force } => {
            cmd_train_codec(&config, &data, &out, seed, resume, stop_after_epochs, force)
        }
        Command::TrainScene { config, data, codec, out, seed, resume, stop_after_epochs, force } => {
            cmd_train_scene(&config, &data, &codec, &out, seed, resume, stop_after_epochs, force)
        }
        Command::Generate {
            model,
            mask,
            mask_from_scene,
            seed,
            out,
            obj_dir,
            codec,
            max_objects,
            force,
        } => cmd_generate(
            &model,
            mask.as_deref(),
            mask_from_scene.as_deref(),
            seed,
            &out,
            obj_dir.as_deref(),
            codec.as_deref(),
            max_objects,
            force,
        ),
        Command::Complete { model, partial, seed, out, max_objects, force } => {
            cmd_complete(&model, &partial, seed, &out, max_objects, force)
        }
        Command::Correct { model, scene, threshold_pct, seed, out, force } => {
            cmd_correct(&model, &scene, threshold_pct, seed, &out, force)
        }
        Command::Edit { codec, shape_a, shape_b, region, out, force } => {
            cmd_edit(&codec, &shape_a, &shape_b, &region, &out, force)
        }
        Command::Eval { model, codec, data, metrics, n, seed, out, force } => {
            cmd_eval(&model, &codec, &data, &metrics, n, seed, &out, force)
        }
    }
}

// ── shared helpers ───────────────────────────────────────────────────

fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Data(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn log_config(config: &Config) {
    eprintln!("resolved config (hash {}):", config.hash());
    eprintln!("{}", config.to_json());
}

#[derive(Debug, serde::Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeLine {
    category: String,
    style_seed: u64,
}

fn read_shape_corpus(path: &Path) -> Result<Vec<FurnitureSolid>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut solids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: ShapeLine = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        solids.push(make_furniture(&spec.category, spec.style_seed)?);
    }
    if solids.is_empty() {
        return Err(Error::Data(format!("{}: empty shape corpus", path.display())));
    }
    Ok(solids)
}

fn read_scene_corpus(path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut scenes = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(scene_from_json(line)?);
    }
    if scenes.is_empty() {
        return Err(Error::Data(format!("{}: empty scene corpus", path.display())));
    }
    Ok(scenes)
}

fn stats_sidecar_path(corpus: &Path) -> PathBuf {
    let mut os = corpus.as_os_str().to_os_string();
    os.push(".stats.json");
    PathBuf::from(os)
}

fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    let mut os = checkpoint.as_os_str().to_os_string();
    os.push(".loss.csv");
    PathBuf::from(os)
}

/// Append loss rows, keeping the file strictly monotone in step: on resume,
/// rows at or past the first new step are dropped before appending.
fn write_loss_csv(path: &Path, header: &str, rows: &[(u64, f64, f64)], resume: bool) -> Result<()> {
    let mut lines: Vec<String> = Vec::new();
    if resume && path.exists() {
        let existing = std::fs::read_to_string(path)?;
        let first_new = rows.first().map(|r| r.0).unwrap_or(u64::MAX);
        for line in existing.lines().skip(1) {
            if let Some(step) = line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                if step < first_new {
                    lines.push(line.to_string());
                }
            }
        }
    }
    for (step, a, b) in rows {
        lines.push(format!("{step},{a},{b}"));
    }
    let mut out = String::with_capacity(lines.len() * 32);
    out.push_str(header);
    out.push('\n');
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── commands ─────────────────────────────────────────────────────────

fn cmd_gen_data(config: &Path, out: &Path, count: usize, seed: u64, force: bool) -> Result<()> {
    let config = Config::load(config)?;
    log_config(&config);
    ensure_writable(out, force)?;
    let sidecar = stats_sidecar_path(out);
    ensure_writable(&sidecar, force)?;

    match config.data.kind.as_str() {
        "shapes" => {
            let styles = config.data.shapes_per_category as u64;
            let mut lines = String::new();
            for i in 0..count {
                let category = CONTENT_CATEGORIES[i % CONTENT_CATEGORIES.len()];
                let style_seed = (i / CONTENT_CATEGORIES.len()) as u64 % styles;
                lines.push_str(&format!(
                    "{{\"category\":\"{category}\",\"style_seed\":{style_seed}}}\n"
                ));
            }
            std::fs::write(out, lines)?;
            let sidecar_json = serde_json::json!({
                "kind": "shapes",
                "count": count,
                "config_hash": config.hash(),
            });
            std::fs::write(&sidecar, serde_json::to_string_pretty(&sidecar_json).unwrap() + "\n")?;
        }
        "scenes" => {
            let codec_path = config.data.codec.as_ref().ok_or_else(|| {
                Error::Config("data.codec must point at a codec checkpoint for scene corpora".to_string())
            })?;
            let (codec, _, _) = CodecModel::load(Path::new(codec_path), config.codec.clone())?;
            let mut scene_codec = SceneCodec::new(&codec);
            let scenes = generate_corpus(&config.corpus, &mut scene_codec, count, seed)?;
            let mut lines = String::new();
            for scene in &scenes {
                lines.push_str(&scene_to_json(scene));
                lines.push('\n');
            }
            std::fs::write(out, lines)?;

            let stats = CorpusStats::from_scenes(&scenes)?;
            let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
            for scene in &scenes {
                for inst in &scene.furniture {
                    *counts.entry(inst.category.clone()).or_default() += 1;
                }
            }
            let sidecar_json = serde_json::json!({
                "kind": "scenes",
                "count": scenes.len(),
                "stats": stats,
                "category_counts": counts,
                "codec_manifest_hash": codec.manifest_hash(),
                "config_hash": config.hash(),
            });
            std::fs::write(&sidecar, serde_json::to_string_pretty(&sidecar_json).unwrap() + "\n")?;
        }
        other => {
            return Err(Error::Config(format!(
                "data.kind must be \"shapes\" or \"scenes\", got {other:?}"
            )));
        }
    }
    eprintln!("wrote {} entries to {}", count, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_codec(
    config: &Path,
    data: &Path,
    out: &Path,
    seed: u64,
    resume: bool,
    stop_after_epochs: Option<u64>,
    force: bool,
) -> Result<()> {
    let config = Config::load(config)?;
    log_config(&config);
    if !resume {
        ensure_writable(out, force)?;
    } else if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    let corpus = read_shape_corpus(data)?;
    let (model, rows) = train_codec(
        &corpus,
        &config.codec,
        seed,
        TrainOptions { checkpoint: Some(out), resume, stop_after_epochs },
    )?;
    let csv_rows: Vec<(u64, f64, f64)> =
        rows.iter().map(|r| (r.step, r.occupancy, r.commitment)).collect();
    write_loss_csv(&loss_csv_path(out), "step,occupancy,commitment", &csv_rows, resume)?;
    if rows.is_empty() {
        // Training was already complete; make sure the checkpoint exists.
        model.save(out, None, config.codec.epochs as u64)?;
    }
    eprintln!(
        "codec trained: {} steps, final occupancy loss {:.4}",
        rows.len(),
        rows.last().map(|r| r.occupancy).unwrap_or(f64::NAN)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_scene(
    config: &Path,
    data: &Path,
    codec: &Path,
    out: &Path,
    seed: u64,
    resume: bool,
    stop_after_epochs: Option<u64>,
    force: bool,
) -> Result<()> {
    let config = Config::load(config)?;
    log_config(&config);
    if !resume {
        ensure_writable(out, force)?;
    } else if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    let scenes = read_scene_corpus(data)?;
    let (codec_model, _, _) = CodecModel::load(codec, config.codec.clone())?;

    // The corpus must have been encoded by exactly this codec.
    let sidecar_path = stats_sidecar_path(data);
    let sidecar_text = std::fs::read_to_string(&sidecar_path)
        .map_err(|e| Error::Data(format!("{}: {e}", sidecar_path.display())))?;
    let sidecar: serde_json::Value = serde_json::from_str(&sidecar_text)
        .map_err(|e| Error::Data(format!("{}: {e}", sidecar_path.display())))?;
    let recorded = sidecar["codec_manifest_hash"].as_str().unwrap_or_default();
    let actual = codec_model.manifest_hash();
    if recorded != actual {
        return Err(Error::Data(format!(
            "codec manifest hash mismatch: corpus was encoded with {recorded}, --codec is {actual}"
        )));
    }

    let mut scene_config = config.scene.clone();
    if scene_config.m_anchors != codec_model.config.m_anchors
        || scene_config.codebook_size != codec_model.config.codebook_size
    {
        eprintln!(
            "note: aligning scene config to codec (M={}, |D|={})",
            codec_model.config.m_anchors, codec_model.config.codebook_size
        );
        scene_config.m_anchors = codec_model.config.m_anchors;
        scene_config.codebook_size = codec_model.config.codebook_size;
    }

    let stats = CorpusStats::from_scenes(&scenes)?;
    let (model, rows) = crate::scene_generator::train_scene(
        &scenes,
        stats,
        CategoryTable::desk(),
        actual,
        &scene_config,
        seed,
        crate::scene_generator::SceneTrainOptions {
            checkpoint: Some(out),
            resume,
            stop_after_epochs,
        },
    )?;
    let csv_rows: Vec<(u64, f64, f64)> =
        rows.iter().map(|r| (r.step, r.layout, r.shape)).collect();
    write_loss_csv(&loss_csv_path(out), "step,layout,shape", &csv_rows, resume)?;
    if rows.is_empty() {
        model.save(out, None, scene_config.epochs as u64)?;
    }
    eprintln!(
        "scene model trained: {} steps, final layout loss {:.4}",
        rows.len(),
        rows.last().map(|r| r.layout).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_mask(
    mask: Option<&Path>,
    mask_from_scene: Option<&str>,
) -> Result<FloorPlanMask> {
    match (mask, mask_from_scene) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            mask_from_json(text.trim())
        }
        (None, Some(spec)) => {
            let (path, index) = match spec.rsplit_once(':') {
                Some((p, idx)) if idx.chars().all(|c| c.is_ascii_digit()) => {
                    (PathBuf::from(p), idx.parse::<usize>().unwrap())
                }
                _ => (PathBuf::from(spec), 0),
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let line = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .nth(index)
                .ok_or_else(|| {
                    Error::Data(format!("{} has no line {index}", path.display()))
                })?;
            Ok(scene_from_json(line)?.floor)
        }
        _ => Err(Error::Config(
            "exactly one of --mask / --mask-from-scene is required".to_string(),
        )),
    }
}

fn write_scene(path: &Path, scene: &Scene, force: bool) -> Result<()> {
    ensure_writable(path, force)?;
    std::fs::write(path, scene_to_json(scene) + "\n")?;
    Ok(())
}

fn export_scene_objs(
    scene: &Scene,
    codec: &CodecModel,
    dir: &Path,
    force: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, inst) in scene.furniture.iter().enumerate() {
        let path = dir.join(format!("object_{:02}_{}.obj", i, inst.category));
        ensure_writable(&path, force)?;
        let grid = codec.reconstruct_grid(&inst.shape, 32)?;
        export_grid_obj(&grid, 0.5, &path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    model: &Path,
    mask: Option<&Path>,
    mask_from_scene: Option<&str>,
    seed: u64,
    out: &Path,
    obj_dir: Option<&Path>,
    codec: Option<&Path>,
    max_objects: usize,
    force: bool,
) -> Result<()> {
    let (gen, _, _) = GeneratorModel::load(model)?;
    let mask = load_mask(mask, mask_from_scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = generate_scene(&mask, &gen, &mut rng, max_objects, 1.0)?;
    write_scene(out, &scene, force)?;
    eprintln!("generated {} objects -> {}", scene.furniture.len(), out.display());
    if let Some(dir) = obj_dir {
        let codec_path = codec.ok_or_else(|| {
            Error::Config("--obj-dir needs --codec to decode shapes".to_string())
        })?;
        let (codec_model, _, _) = CodecModel::load_auto(codec_path)?;
        export_scene_objs(&scene, &codec_model, dir, force)?;
        eprintln!("wrote OBJ files to {}", dir.display());
    }
    Ok(())
}

fn cmd_complete(
    model: &Path,
    partial: &Path,
    seed: u64,
    out: &Path,
    max_objects: usize,
    force: bool,
) -> Result<()> {
    let (gen, _, _) = GeneratorModel::load(model)?;
    let text = std::fs::read_to_string(partial)
        .map_err(|e| Error::Data(format!("{}: {e}", partial.display())))?;
    let scene = scene_from_json(text.lines().next().unwrap_or_default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let completed = complete_scene(&scene, &gen, &mut rng, max_objects, 1.0)?;
    write_scene(out, &completed, force)?;
    eprintln!(
        "completed scene: {} -> {} objects",
        scene.furniture.len(),
        completed.furniture.len()
    );
    Ok(())
}

fn cmd_correct(
    model: &Path,
    scene: &Path,
    threshold_pct: f64,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<()> {
    let (gen, _, _) = GeneratorModel::load(model)?;
    let text = std::fs::read_to_string(scene)
        .map_err(|e| Error::Data(format!("{}: {e}", scene.display())))?;
    let input = scene_from_json(text.lines().next().unwrap_or_default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (corrected, flagged) = correct_mismatch(&input, &gen, &mut rng, threshold_pct, 1.0)?;
    write_scene(out, &corrected, force)?;
    eprintln!("flagged objects: {flagged:?}");
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StyledShapeSpec {
    category: String,
    style_seed: u64,
}

fn parse_region(text: &str) -> Result<([f64; 3], [f64; 3])> {
    let parts: Vec<f64> = text
        .split([':', ','])
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad region {text:?}: {e}")))?;
    if parts.len() != 6 {
        return Err(Error::Config(format!(
            "region must be x0,y0,z0:x1,y1,z1 — got {} numbers",
            parts.len()
        )));
    }
    Ok(([parts[0], parts[1], parts[2]], [parts[3], parts[4], parts[5]]))
}

fn cmd_edit(
    codec: &Path,
    shape_a: &Path,
    shape_b: &Path,
    region: &str,
    out: &Path,
    force: bool,
) -> Result<()> {
    let (codec_model, _, _) = CodecModel::load_auto(codec)?;
    let mut scene_codec = SceneCodec::new(&codec_model);
    let mut load_shape = |path: &Path| -> Result<AnchorLatentSet> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let spec: StyledShapeSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let (latents, _, _) = scene_codec.encode_style(&spec.category, spec.style_seed)?;
        Ok(latents)
    };
    let a = load_shape(shape_a)?;
    let b = load_shape(shape_b)?;
    let (lo, hi) = parse_region(region)?;
    let mixed = mix_anchor_latents(&a, &b, lo, hi)?;

    let json_path = out.with_extension("json");
    let obj_path = out.with_extension("obj");
    ensure_writable(&json_path, force)?;
    ensure_writable(&obj_path, force)?;
    let doc = serde_json::json!({
        "anchors": mixed.anchors(),
        "codes": mixed.codes(),
    });
    std::fs::write(&json_path, serde_json::to_string(&doc).unwrap() + "\n")?;
    let grid = codec_model.reconstruct_grid(&mixed, 32)?;
    export_grid_obj(&grid, 0.5, &obj_path)?;
    eprintln!("wrote {} and {}", json_path.display(), obj_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model: &Path,
    codec: &Path,
    data: &Path,
    metrics: &str,
    n: usize,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<()> {
    let requested: Vec<&str> = metrics.split(',').map(|m| m.trim()).collect();
    for m in &requested {
        if !["collision", "ckl", "consistency", "diversity"].contains(m) {
            return Err(Error::Config(format!("unknown metric {m:?}")));
        }
    }
    let (gen, _, _) = GeneratorModel::load(model)?;
    let (codec_model, _, _) = CodecModel::load_auto(codec)?;
    let reference = read_scene_corpus(data)?;
    let config_hash = gen.config_hash();

    // Held-out masks: the tail of the reference corpus.
    let held_out = 10.min(reference.len());
    let masks: Vec<FloorPlanMask> = reference[reference.len() - held_out..]
        .iter()
        .map(|s| s.floor.clone())
        .collect();

    // Generate n scenes round-robin over the held-out masks.
    let mut generated = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ crate::util::fnv1a64(format!("eval-scene:{i}").as_bytes()),
        );
        let scene = generate_scene(&masks[i % masks.len()], &gen, &mut rng, 13, 1.0)?;
        generated.push(scene);
    }
    let non_empty: Vec<Scene> =
        generated.iter().filter(|s| !s.furniture.is_empty()).cloned().collect();

    ensure_writable(out, force)?;
    let mut file = std::fs::File::create(out)?;
    for metric in requested {
        let report = match metric {
            "collision" => collision_rate(&non_empty).map(|(value, breakdown)| MetricReport {
                metric: "collision".to_string(),
                value,
                n: breakdown.len(),
                config_hash: config_hash.clone(),
                breakdown,
            }),
            "ckl" => category_kl(&generated, &reference).map(|value| MetricReport {
                metric: "ckl".to_string(),
                value,
                n: generated.len(),
                config_hash: config_hash.clone(),
                breakdown: Vec::new(),
            }),
            "consistency" => {
                within_scene_consistency(&generated, &"chair".to_string(), &codec_model).map(
                    |(value, breakdown)| MetricReport {
                        metric: "consistency".to_string(),
                        value,
                        n: breakdown.len(),
                        config_hash: config_hash.clone(),
                        breakdown,
                    },
                )
            }
            "diversity" => cross_run_diversity(
                &masks,
                &gen,
                &codec_model,
                10,
                "chair",
                13,
                seed ^ 0x5eed,
            )
            .map(|(value, breakdown)| MetricReport {
                metric: "diversity".to_string(),
                value,
                n: breakdown.len(),
                config_hash: config_hash.clone(),
                breakdown,
            }),
            _ => unreachable!("validated above"),
        };
        match report {
            Ok(r) => writeln!(file, "{}", r.json_line())?,
            Err(Error::UndefinedMetric(msg)) => {
                eprintln!("metric {metric} undefined: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    eprintln!("wrote report to {}", out.display());
    Ok(())
}
