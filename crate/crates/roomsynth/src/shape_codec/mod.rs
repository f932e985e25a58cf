//! Stage one: the anchor-latent shape codec. Furniture surface clouds are
//! summarized as M anchor points with vector-quantized local features; a
//! transformer decoder turns the quantized set back into an occupancy field
//! trained against the analytic CSG ground truth.

mod codebook;
mod net;
mod train;

pub use codebook::Codebook;
pub use net::{codec_loss_on_tape, decode_on_tape, encode_patches_on_tape, quantize_on_tape, LossParts};
pub use train::{prepare_shape, train_codec, LossRow, ShapeEntry, TrainOptions};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{fps, knn_patches, OccupancyGrid, PointCloud};
use crate::numerics::{read_chunks, write_chunks, AdamState, Chunk, ParamStore, Tape};
use crate::util::fnv1a64;

/// M anchor points paired with M codebook indices, kept sorted ascending by
/// (x, y, z, code).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLatentSet {
    anchors: Vec<[f64; 3]>,
    codes: Vec<usize>,
}

impl AnchorLatentSet {
    pub fn new(mut pairs: Vec<([f64; 3], usize)>) -> Self {
        assert!(!pairs.is_empty(), "anchor-latent set must be non-empty");
        pairs.sort_by(|(a, ca), (b, cb)| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
                .then(ca.cmp(cb))
        });
        let (anchors, codes) = pairs.into_iter().unzip();
        AnchorLatentSet { anchors, codes }
    }

    pub fn from_parts(anchors: Vec<[f64; 3]>, codes: Vec<usize>) -> Self {
        assert_eq!(anchors.len(), codes.len());
        Self::new(anchors.into_iter().zip(codes).collect())
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[[f64; 3]] {
        &self.anchors
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn pairs(&self) -> impl Iterator<Item = ([f64; 3], usize)> + '_ {
        self.anchors.iter().copied().zip(self.codes.iter().copied())
    }
}

/// Codec hyperparameters. `desk()` is the scale everything here trains at;
/// `paper()` mirrors the published configuration and is selectable but not
/// runnable on a CPU budget.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CodecConfig {
    pub n_surface: usize,
    pub m_anchors: usize,
    pub knn: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub queries_per_step: usize,
    pub epochs: usize,
    pub lr: f64,
    pub commitment_weight: f64,
    pub pos_dims: usize,
    pub enc_attn_layers: usize,
    pub dec_attn_layers: usize,
    pub attn_heads: usize,
    pub ff_dim: usize,
    pub ema_decay: f64,
    pub ema_eps: f64,
    pub dead_code_steps: u32,
    pub near_surface_noise: f64,
    /// Epochs of plain autoencoder training before quantization engages;
    /// the commitment loss then freezes an already-diverse latent layout
    /// instead of collapsing it.
    pub warmup_epochs: usize,
}

impl CodecConfig {
    pub fn desk() -> Self {
        CodecConfig {
            n_surface: 1024,
            m_anchors: 64,
            knn: 16,
            codebook_size: 128,
            latent_dim: 32,
            queries_per_step: 512,
            epochs: 200,
            lr: 3e-3,
            commitment_weight: 0.25,
            pos_dims: 16,
            enc_attn_layers: 2,
            dec_attn_layers: 4,
            attn_heads: 4,
            ff_dim: 64,
            ema_decay: 0.99,
            ema_eps: 1e-5,
            dead_code_steps: 50,
            near_surface_noise: 0.05,
            warmup_epochs: 100,
        }
    }

    pub fn paper() -> Self {
        CodecConfig {
            n_surface: 2048,
            m_anchors: 512,
            knn: 32,
            codebook_size: 1024,
            latent_dim: 256,
            queries_per_step: 2048,
            epochs: 1000,
            lr: 1e-3,
            commitment_weight: 0.25,
            pos_dims: 64,
            enc_attn_layers: 2,
            dec_attn_layers: 4,
            attn_heads: 16,
            ff_dim: 1024,
            ema_decay: 0.99,
            ema_eps: 1e-5,
            dead_code_steps: 50,
            near_surface_noise: 0.05,
            warmup_epochs: 100,
        }
    }
}

/// Trained (or initialized) codec: parameters plus codebook.
#[derive(Debug, Clone)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub params: ParamStore,
    pub codebook: Codebook,
}

impl CodecModel {
    pub fn init(config: CodecConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = net::init_params(&config, &mut rng);
        let codebook = Codebook::init(
            config.codebook_size,
            config.latent_dim,
            config.m_anchors as f64,
            &mut rng,
        );
        let mut codebook = codebook;
        codebook.decay = config.ema_decay;
        codebook.smoothing_eps = config.ema_eps;
        codebook.dead_code_steps = config.dead_code_steps;
        CodecModel { config, params, codebook }
    }

    /// FPS anchors and raw latents for a surface cloud.
    pub fn encode(&self, cloud: &PointCloud) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (anchors, z) = net::encode_on_tape(&mut tape, &self.params, &self.config, cloud)?;
        tape.ensure_finite()?;
        Ok((anchors, tape.data(z).to_vec()))
    }

    /// Encode and quantize a cloud into its anchor-latent set.
    pub fn encode_quantize(&self, cloud: &PointCloud) -> Result<AnchorLatentSet> {
        let (anchors, z) = self.encode(cloud)?;
        let codes = self.codebook.quantize_rows(&z);
        Ok(AnchorLatentSet::from_parts(anchors, codes))
    }

    /// Occupancy probabilities at arbitrary query points.
    pub fn decode_probs(&self, latents: &AnchorLatentSet, queries: &[[f64; 3]]) -> Result<Vec<f64>> {
        for (_, code) in latents.pairs() {
            if code >= self.codebook.size() {
                return Err(Error::Contract(format!(
                    "code {code} out of codebook range {}",
                    self.codebook.size()
                )));
            }
        }
        let mut tape = Tape::new();
        let zq_data = self.codebook.lookup_rows(latents.codes());
        let zq = tape.value(vec![latents.len(), self.config.latent_dim], zq_data);
        let probs = net::decode_on_tape(
            &mut tape,
            &self.params,
            &self.config,
            zq,
            latents.anchors(),
            queries,
        );
        tape.ensure_finite()?;
        Ok(tape.data(probs).to_vec())
    }

    /// Decode evaluated at all voxel centers.
    pub fn reconstruct_grid(&self, latents: &AnchorLatentSet, resolution: usize) -> Result<OccupancyGrid> {
        if resolution < 8 {
            return Err(Error::Contract(format!(
                "reconstruct_grid: resolution {resolution} < 8"
            )));
        }
        let centers = OccupancyGrid::centers(resolution);
        let probs = self.decode_probs(latents, &centers)?;
        Ok(OccupancyGrid::new(resolution, probs))
    }

    // ── persistence ──────────────────────────────────────────────────

    pub fn to_chunks(&self) -> Vec<Chunk> {
        let mut chunks = self.params.to_chunks();
        chunks.extend(self.codebook.to_chunks());
        chunks
    }

    pub fn save(&self, path: &Path, adam: Option<&AdamState>, epoch: u64) -> Result<()> {
        let mut chunks = self.to_chunks();
        if let Some(a) = adam {
            chunks.extend(a.to_chunks());
        }
        chunks.push(Chunk {
            name: "train.epoch".to_string(),
            extents: vec![1],
            payload: vec![epoch as f64],
        });
        write_chunks(path, &chunks)?;
        let manifest = self.manifest_json();
        std::fs::write(manifest_path(path), manifest)?;
        Ok(())
    }

    pub fn load(path: &Path, config: CodecConfig) -> Result<(Self, AdamState, u64)> {
        let chunks = read_chunks(path)?;
        let param_chunks: Vec<Chunk> = chunks
            .iter()
            .filter(|c| {
                !c.name.starts_with("codebook.")
                    && !c.name.starts_with("opt.")
                    && c.name != "train.epoch"
            })
            .cloned()
            .collect();
        let params = ParamStore::from_chunks(&param_chunks);
        let codebook =
            Codebook::from_chunks(&chunks, config.codebook_size, config.latent_dim).ok_or_else(
                || Error::Data(format!("{}: codebook chunks missing or mismatched", path.display())),
            )?;
        let mut adam = AdamState::new(config.lr);
        adam.restore_chunks(&chunks);
        let epoch = chunks
            .iter()
            .find(|c| c.name == "train.epoch")
            .map(|c| c.payload[0] as u64)
            .unwrap_or(0);
        Ok((CodecModel { config, params, codebook }, adam, epoch))
    }

    /// Sidecar manifest: M, C, |D|, k, the config hash, plus the full
    /// config so a checkpoint reloads without an external document.
    pub fn manifest_json(&self) -> String {
        format!(
            "{{\"m_anchors\":{},\"latent_dim\":{},\"codebook_size\":{},\"knn\":{},\"config_hash\":\"{}\",\"config\":{}}}\n",
            self.config.m_anchors,
            self.config.latent_dim,
            self.config.codebook_size,
            self.config.knn,
            self.config_hash(),
            serde_json::to_string(&self.config).expect("config serializes"),
        )
    }

    /// Load a checkpoint using the config stored in its manifest sidecar.
    pub fn load_auto(path: &Path) -> Result<(Self, AdamState, u64)> {
        let manifest = std::fs::read_to_string(manifest_path(path))
            .map_err(|e| Error::Data(format!("missing codec manifest: {e}")))?;
        let v: serde_json::Value = serde_json::from_str(&manifest)
            .map_err(|e| Error::Data(format!("bad codec manifest: {e}")))?;
        let config: CodecConfig = serde_json::from_value(v["config"].clone())
            .map_err(|e| Error::Data(format!("codec manifest lacks a usable config: {e}")))?;
        Self::load(path, config)
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.config).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }

    /// Hash of the manifest itself; scene corpora record it so stage two can
    /// refuse mismatched codecs.
    pub fn manifest_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.manifest_json().as_bytes()))
    }
}

pub fn manifest_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut os = checkpoint.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Anchors and anchor-relative kNN patches for one cloud.
pub fn anchors_and_patches(
    cloud: &PointCloud,
    m: usize,
    k: usize,
) -> Result<(Vec<[f64; 3]>, Vec<Vec<[f64; 3]>>)> {
    if cloud.len() < m.max(k) {
        return Err(Error::Contract(format!(
            "cloud of {} points is too small for M={m}, k={k}",
            cloud.len()
        )));
    }
    let idx = fps(cloud, m)?;
    let anchors: Vec<[f64; 3]> = idx.iter().map(|&i| cloud.points[i]).collect();
    let patches = knn_patches(cloud, &anchors, k)?;
    Ok((anchors, patches.patches))
}

#[cfg(test)]
mod tests;
