//! Joint training of the scene and shape transformers: permuted scenes,
//! random prefixes, teacher forcing, one Adam step per batch.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attributes::{extract_attributes, shape_condition, AttributeValues};
use super::encoders::{encode_floor, furniture_token};
use super::shape_gen::shape_teacher_forward;
use super::{scene_forward, GeneratorConfig, GeneratorModel};
use crate::distributions::{ce_row, mol_nll_rows};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, ParamStore, Tape, ValueId};
use crate::scene_model::{
    normalize_instance, permute_objects, CategoryTable, CorpusStats, FurnitureInstance, Scene,
};
use crate::util::fnv1a64;

#[derive(Debug, Clone, Copy, Default)]
pub struct SceneLossParts {
    pub category_ce: f64,
    pub translation_nll: f64,
    pub rotation_nll: f64,
    pub size_nll: f64,
    pub shape_nll: f64,
    pub total: f64,
}

/// Cross entropy summed over rows of [n, L] logits against target indices.
fn ce_rows(tape: &mut Tape, logits: ValueId, targets: &[usize]) -> ValueId {
    let shape = tape.shape(logits).to_vec();
    let (n, l) = (shape[0], shape[1]);
    assert_eq!(targets.len(), n);
    let logp = tape.log_softmax(logits);
    let flat = tape.reshape(logp, vec![n * l, 1]);
    let rows: Vec<Vec<(usize, f64)>> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            assert!(t < l, "target {t} out of range {l}");
            vec![(i * l + t, 1.0)]
        })
        .collect();
    let picked = tape.lin_comb(flat, rows);
    let s = tape.sum(picked);
    tape.scale(s, -1.0)
}

pub(super) fn normalized_values(
    inst: &FurnitureInstance,
    stats: &CorpusStats,
    categories: &CategoryTable,
) -> Result<AttributeValues> {
    let (t, s, r) = normalize_instance(inst, stats);
    Ok(AttributeValues {
        category: categories.index_of(&inst.category)?,
        translation: t,
        rotation: r,
        size: s,
    })
}

pub(super) fn context_token_list(
    tape: &mut Tape,
    store: &ParamStore,
    config: &GeneratorConfig,
    categories: &CategoryTable,
    stats: &CorpusStats,
    objects: &[&FurnitureInstance],
) -> Result<Vec<ValueId>> {
    let mut tokens = Vec::with_capacity(objects.len());
    for inst in objects {
        let v = normalized_values(inst, stats, categories)?;
        tokens.push(furniture_token(
            tape,
            store,
            config,
            v.category,
            categories.len(),
            &v.translation,
            v.rotation,
            &v.size,
            &inst.shape,
        )?);
    }
    Ok(tokens)
}

/// Teacher-forced loss of one (context, target) pair; `target: None` trains
/// the 'end' decision, for which only the category term exists.
pub fn object_loss_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &GeneratorConfig,
    categories: &CategoryTable,
    stats: &CorpusStats,
    scene: &Scene,
    context: &[&FurnitureInstance],
    target: Option<&FurnitureInstance>,
) -> Result<(ValueId, SceneLossParts)> {
    let n_cat = categories.len();
    let floor_token = encode_floor(tape, store, config, &scene.floor)?;
    let tokens = context_token_list(tape, store, config, categories, stats, context)?;
    let qhat = scene_forward(tape, store, config, floor_token, &tokens);

    match target {
        None => {
            let pred = extract_attributes(tape, store, config, n_cat, qhat, None);
            let loss = ce_row(tape, pred.category_logits, categories.end_index());
            let parts = SceneLossParts {
                category_ce: tape.data(loss)[0],
                total: tape.data(loss)[0],
                ..Default::default()
            };
            Ok((loss, parts))
        }
        Some(inst) => {
            let values = normalized_values(inst, stats, categories)?;
            let pred = extract_attributes(tape, store, config, n_cat, qhat, Some(&values));
            let ce = ce_row(tape, pred.category_logits, values.category);
            let t_nll_rows =
                mol_nll_rows(tape, pred.translation.expect("teacher params"), &values.translation);
            let t_nll = tape.sum(t_nll_rows);
            let r_nll_rows =
                mol_nll_rows(tape, pred.rotation.expect("teacher params"), &[values.rotation]);
            let r_nll = tape.sum(r_nll_rows);
            let s_nll_rows =
                mol_nll_rows(tape, pred.size.expect("teacher params"), &values.size);
            let s_nll = tape.sum(s_nll_rows);

            let cond = shape_condition(tape, n_cat, qhat, &values);
            let shape_params = shape_teacher_forward(tape, store, config, cond, &inst.shape)?;
            let xs: Vec<f64> = inst.shape.anchors().iter().map(|a| a[0]).collect();
            let ys: Vec<f64> = inst.shape.anchors().iter().map(|a| a[1]).collect();
            let zs: Vec<f64> = inst.shape.anchors().iter().map(|a| a[2]).collect();
            let x_nll_rows = mol_nll_rows(tape, shape_params.x, &xs);
            let y_nll_rows = mol_nll_rows(tape, shape_params.y, &ys);
            let z_nll_rows = mol_nll_rows(tape, shape_params.z, &zs);
            let x_nll = tape.sum(x_nll_rows);
            let y_nll = tape.sum(y_nll_rows);
            let z_nll = tape.sum(z_nll_rows);
            let id_ce = ce_rows(tape, shape_params.id_logits, inst.shape.codes());

            let layout_a = tape.add(ce, t_nll);
            let layout_b = tape.add(r_nll, s_nll);
            let layout = tape.add(layout_a, layout_b);
            let shape_a = tape.add(x_nll, y_nll);
            let shape_b = tape.add(z_nll, id_ce);
            let shape_raw = tape.add(shape_a, shape_b);
            let shape = tape.scale(shape_raw, config.shape_loss_scale);
            let total = tape.add(layout, shape);

            let parts = SceneLossParts {
                category_ce: tape.data(ce)[0],
                translation_nll: tape.data(t_nll)[0],
                rotation_nll: tape.data(r_nll)[0],
                size_nll: tape.data(s_nll)[0],
                shape_nll: tape.data(shape)[0],
                total: tape.data(total)[0],
            };
            Ok((total, parts))
        }
    }
}

/// Per-scene training term: permute, draw a random prefix length, train the
/// next-object prediction (or the 'end' decision on full prefixes).
pub fn scene_loss_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &GeneratorConfig,
    categories: &CategoryTable,
    stats: &CorpusStats,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
) -> Result<(ValueId, SceneLossParts)> {
    let permuted = permute_objects(scene, rng);
    let prefix = rng.gen_range(0..=permuted.furniture.len());
    let context: Vec<&FurnitureInstance> = permuted.furniture[..prefix].iter().collect();
    let target = permuted.furniture.get(prefix);
    object_loss_on_tape(tape, store, config, categories, stats, &permuted, &context, target)
}

/// One Adam step over a scene batch; the batch loss is the mean of per-scene
/// totals.
pub fn train_step(
    batch: &[Scene],
    model: &mut GeneratorModel,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<SceneLossParts> {
    assert!(!batch.is_empty());
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(batch.len());
    let mut agg = SceneLossParts::default();
    for scene in batch {
        let (loss, parts) = scene_loss_on_tape(
            &mut tape,
            &model.params,
            &model.config,
            &model.categories,
            &model.stats,
            scene,
            rng,
        )?;
        losses.push(loss);
        agg.category_ce += parts.category_ce;
        agg.translation_nll += parts.translation_nll;
        agg.rotation_nll += parts.rotation_nll;
        agg.size_nll += parts.size_nll;
        agg.shape_nll += parts.shape_nll;
        agg.total += parts.total;
    }
    let n = batch.len() as f64;
    let stacked = tape.concat(&losses, 0);
    let total = tape.sum(stacked);
    let total = tape.scale(total, 1.0 / n);
    if !tape.data(total)[0].is_finite() {
        return Err(Error::Numeric("scene training loss went non-finite".to_string()));
    }
    tape.backward(total, &mut model.params)?;
    adam_step(&mut model.params, adam)?;

    agg.category_ce /= n;
    agg.translation_nll /= n;
    agg.rotation_nll /= n;
    agg.size_nll /= n;
    agg.shape_nll /= n;
    agg.total /= n;
    Ok(agg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLossRow {
    pub step: u64,
    pub layout: f64,
    pub shape: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SceneTrainOptions<'a> {
    pub checkpoint: Option<&'a Path>,
    pub resume: bool,
    pub stop_after_epochs: Option<u64>,
}

/// Full training loop with per-epoch checkpointing and epoch-derived rng
/// streams (resume replays exactly).
#[allow(clippy::too_many_arguments)]
pub fn train_scene(
    corpus: &[Scene],
    stats: CorpusStats,
    categories: CategoryTable,
    codec_manifest_hash: String,
    config: &GeneratorConfig,
    seed: u64,
    opts: SceneTrainOptions<'_>,
) -> Result<(GeneratorModel, Vec<SceneLossRow>)> {
    if corpus.is_empty() {
        return Err(Error::Contract("train_scene: empty corpus".to_string()));
    }
    let (mut model, mut adam, start_epoch) = match opts.checkpoint {
        Some(path) if opts.resume && path.exists() => {
            let (m, a, e) = GeneratorModel::load(path)?;
            if m.codec_manifest_hash != codec_manifest_hash {
                return Err(Error::Data(format!(
                    "checkpoint codec hash {} does not match data codec hash {codec_manifest_hash}",
                    m.codec_manifest_hash
                )));
            }
            (m, a, e)
        }
        _ => (
            GeneratorModel::init(
                config.clone(),
                stats,
                categories,
                codec_manifest_hash,
                seed,
            )?,
            AdamState::new(config.lr),
            0,
        ),
    };

    let steps_per_epoch = corpus.len().div_ceil(config.batch_size) as u64;
    let mut rows = Vec::new();
    let mut step = start_epoch * steps_per_epoch;
    for epoch in start_epoch..config.epochs as u64 {
        adam.lr = config.lr * (1.0 - 0.9 * epoch as f64 / config.epochs as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(format!("sc-epoch:{epoch}").as_bytes()));
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Scene> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            let parts = train_step(&batch, &mut model, &mut adam, &mut rng)?;
            step += 1;
            rows.push(SceneLossRow {
                step,
                layout: parts.category_ce
                    + parts.translation_nll
                    + parts.rotation_nll
                    + parts.size_nll,
                shape: parts.shape_nll,
            });
        }
        if let Some(path) = opts.checkpoint {
            model.save(path, Some(&adam), epoch + 1)?;
        }
        if let Some(stop) = opts.stop_after_epochs {
            if epoch + 1 - start_epoch >= stop {
                break;
            }
        }
    }
    Ok((model, rows))
}
