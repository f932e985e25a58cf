//! Codec training loop: per-shape Adam steps over the BCE+commitment loss,
//! EMA codebook updates, per-epoch checkpoints, epoch-derived rng streams so
//! a resumed run replays identically.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::codec_loss_on_tape;
use super::{CodecConfig, CodecModel};
use crate::error::{Error, Result};
use crate::geometry::{sample_surface, FurnitureSolid, PointCloud};
use crate::numerics::{adam_step, AdamState, Tape};
use crate::util::fnv1a64;

/// A corpus shape with its cached cloud, anchors, and patches. The geometry
/// never changes across epochs, so it is computed once.
#[derive(Debug, Clone)]
pub struct ShapeEntry {
    pub solid: FurnitureSolid,
    pub cloud: PointCloud,
    pub anchors: Vec<[f64; 3]>,
    pub patches: Vec<Vec<[f64; 3]>>,
}

/// Deterministic preparation of one corpus shape; the cloud seed is derived
/// from (seed, index).
pub fn prepare_shape(
    solid: &FurnitureSolid,
    config: &CodecConfig,
    seed: u64,
    index: usize,
) -> Result<ShapeEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "cloud", index as u64));
    let cloud = sample_surface(solid, config.n_surface, &mut rng)?;
    let (anchors, patches) = super::anchors_and_patches(&cloud, config.m_anchors, config.knn)?;
    Ok(ShapeEntry { solid: solid.clone(), cloud, anchors, patches })
}

fn derive(seed: u64, label: &str, index: u64) -> u64 {
    seed ^ fnv1a64(format!("{label}:{index}").as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub occupancy: f64,
    pub commitment: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    /// Checkpoint written here after every epoch when set.
    pub checkpoint: Option<&'a Path>,
    /// Continue from the checkpoint's stored epoch instead of starting over.
    pub resume: bool,
    /// Interrupt after this many epochs (config untouched); a later resumed
    /// run replays the remainder exactly.
    pub stop_after_epochs: Option<u64>,
}

/// Train the codec. Returns the model and the loss rows of the epochs this
/// call actually ran (empty when the checkpoint was already complete).
pub fn train_codec(
    corpus: &[FurnitureSolid],
    config: &CodecConfig,
    seed: u64,
    opts: TrainOptions<'_>,
) -> Result<(CodecModel, Vec<LossRow>)> {
    if corpus.is_empty() {
        return Err(Error::Contract("train_codec: empty corpus".to_string()));
    }
    let mut shapes = Vec::with_capacity(corpus.len());
    for (i, solid) in corpus.iter().enumerate() {
        shapes.push(prepare_shape(solid, config, seed, i)?);
    }

    let (mut model, mut adam, start_epoch) = match opts.checkpoint {
        Some(path) if opts.resume && path.exists() => {
            let (m, a, e) = CodecModel::load(path, config.clone())?;
            (m, a, e)
        }
        _ => (CodecModel::init(config.clone(), seed), AdamState::new(config.lr), 0),
    };

    let mut rows = Vec::new();
    let mut step = start_epoch * corpus.len() as u64;
    for epoch in start_epoch..config.epochs as u64 {
        // Linear decay to a tenth of the base rate; derived from the epoch
        // index so resumed runs replay identically.
        adam.lr = config.lr * (1.0 - 0.9 * epoch as f64 / config.epochs as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "epoch", epoch));
        let mut order: Vec<usize> = (0..shapes.len()).collect();
        // Fisher-Yates with the epoch stream.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let use_vq = epoch >= config.warmup_epochs as u64;
        for &si in &order {
            let entry = &shapes[si];
            let mut tape = Tape::new();
            let (loss, parts, z_rows, ids) = codec_loss_on_tape(
                &mut tape,
                &model.params,
                &model.codebook,
                config,
                &entry.solid,
                &entry.cloud,
                &entry.anchors,
                &entry.patches,
                use_vq,
                &mut rng,
            )?;
            if !parts.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "codec training diverged at step {step}"
                )));
            }
            tape.backward(loss, &mut model.params)?;
            adam_step(&mut model.params, &mut adam)?;
            if use_vq {
                model.codebook.ema_update(&z_rows, &ids, &mut rng);
            }
            step += 1;
            rows.push(LossRow { step, occupancy: parts.occupancy, commitment: parts.commitment });
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
