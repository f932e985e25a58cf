//! Stage two: the shape-aware autoregressive scene generator.
//!
//! A permutation-invariant transformer consumes the floor feature, the
//! already-placed furniture tokens (box half + anchor half), and a learnable
//! query, producing q-hat. Sequential heads decode category, translation,
//! rotation, and size; a causal shape transformer then generates the
//! object's anchor latents (x, y, z, id) with layered readouts. Everything
//! trains jointly from permuted scenes with random prefixes.

mod attributes;
mod encoders;
mod generate;
mod shape_gen;
mod train;

pub use attributes::{extract_attributes, sample_attributes, shape_condition, AttributePrediction, AttributeValues};
pub use encoders::{encode_anchors, encode_box, encode_floor, furniture_token};
pub use generate::{
    complete_scene, correct_mismatch, end_probability, generate_scene,
    leave_one_out_likelihood, mix_anchor_latents,
};
pub use shape_gen::{run_shape_steps, sample_anchor_latents, shape_teacher_forward, ShapeParams, StepDriver};
pub use train::{object_loss_on_tape, scene_loss_on_tape, train_scene, train_step, SceneLossParts, SceneLossRow, SceneTrainOptions};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_chunks, write_chunks, AdamState, Chunk, ParamStore, Tape, ValueId};
use crate::scene_model::{CategoryTable, CorpusStats};
use crate::transformer::{attn_block, init_attn_block, init_linear, linear, AttnSpec};
use crate::util::fnv1a64;

/// Generator hyperparameters; `desk()` is what trains here, `paper()`
/// mirrors the published scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Per-furniture token width; box half plus anchor half, equal sizes.
    pub token_width: usize,
    pub query_dim: usize,
    pub scene_layers: usize,
    pub scene_heads: usize,
    pub scene_ff: usize,
    pub shape_width: usize,
    pub shape_layers: usize,
    /// Strictly increasing readout depths for x, y, z, id; the last equals
    /// `shape_layers`.
    pub readout_depths: [usize; 4],
    pub shape_heads: usize,
    pub shape_ff: usize,
    pub mixture_k: usize,
    pub cat_emb: usize,
    pub box_pos_dims: usize,
    pub anchor_pos_dims: usize,
    pub head_hidden: usize,
    pub floor_channels: Vec<usize>,
    pub m_anchors: usize,
    pub codebook_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier on the shape term of the joint loss; 1.0 keeps the raw
    /// per-anchor sum.
    pub shape_loss_scale: f64,
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        GeneratorConfig {
            token_width: 128,
            query_dim: 32,
            scene_layers: 2,
            scene_heads: 4,
            scene_ff: 256,
            shape_width: 64,
            shape_layers: 6,
            readout_depths: [3, 4, 5, 6],
            shape_heads: 4,
            shape_ff: 256,
            mixture_k: 5,
            cat_emb: 16,
            box_pos_dims: 8,
            anchor_pos_dims: 16,
            head_hidden: 64,
            floor_channels: vec![8, 16, 32, 64],
            m_anchors: 64,
            codebook_size: 128,
            epochs: 60,
            batch_size: 16,
            lr: 1e-3,
            shape_loss_scale: 1.0,
        }
    }

    pub fn paper() -> Self {
        GeneratorConfig {
            token_width: 1024,
            query_dim: 64,
            scene_layers: 4,
            scene_heads: 16,
            scene_ff: 2048,
            shape_width: 512,
            shape_layers: 12,
            readout_depths: [6, 8, 10, 12],
            shape_heads: 16,
            shape_ff: 2048,
            mixture_k: 10,
            cat_emb: 64,
            box_pos_dims: 64,
            anchor_pos_dims: 64,
            head_hidden: 128,
            floor_channels: vec![16, 32, 64, 128],
            m_anchors: 512,
            codebook_size: 1024,
            epochs: 500,
            batch_size: 128,
            lr: 1e-3,
            shape_loss_scale: 1.0,
        }
    }

    pub fn box_half(&self) -> usize {
        self.token_width / 2
    }

    pub fn scene_spec(&self) -> AttnSpec {
        AttnSpec { dim: self.token_width, heads: self.scene_heads, ff: self.scene_ff }
    }

    pub fn shape_spec(&self) -> AttnSpec {
        AttnSpec { dim: self.shape_width, heads: self.shape_heads, ff: self.shape_ff }
    }

    pub fn validate(&self, n_categories: usize) -> Result<()> {
        if self.token_width % 2 != 0 {
            return Err(Error::Config("token_width must be even".to_string()));
        }
        if self.token_width % self.scene_heads != 0 || self.shape_width % self.shape_heads != 0 {
            return Err(Error::Config("width must divide heads".to_string()));
        }
        let d = self.readout_depths;
        if !(d[0] < d[1] && d[1] < d[2] && d[2] < d[3]) || d[3] != self.shape_layers {
            return Err(Error::Config(
                "readout depths must increase strictly and end at shape_layers".to_string(),
            ));
        }
        if self.box_pos_dims % 2 != 0 || self.anchor_pos_dims % 2 != 0 {
            return Err(Error::Config("positional dims must be even".to_string()));
        }
        if n_categories == 0 {
            return Err(Error::Config("empty category table".to_string()));
        }
        Ok(())
    }

    /// Width of the raw shape-condition vector (q-hat, one-hot category,
    /// t, r, s).
    pub fn cond_width(&self, n_categories: usize) -> usize {
        self.query_dim + n_categories + 3 + 1 + 3
    }
}

/// Trained (or initialized) scene generator.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub params: ParamStore,
    pub stats: CorpusStats,
    pub categories: CategoryTable,
    pub codec_manifest_hash: String,
}

impl GeneratorModel {
    pub fn init(
        config: GeneratorConfig,
        stats: CorpusStats,
        categories: CategoryTable,
        codec_manifest_hash: String,
        seed: u64,
    ) -> Result<Self> {
        config.validate(categories.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, categories.len(), &mut rng);
        Ok(GeneratorModel { config, params, stats, categories, codec_manifest_hash })
    }

    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.config).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }

    pub fn save(&self, path: &Path, adam: Option<&AdamState>, epoch: u64) -> Result<()> {
        let mut chunks = self.params.to_chunks();
        if let Some(a) = adam {
            chunks.extend(a.to_chunks());
        }
        chunks.push(Chunk {
            name: "train.epoch".to_string(),
            extents: vec![1],
            payload: vec![epoch as f64],
        });
        write_chunks(path, &chunks)?;
        let manifest = serde_json::json!({
            "config": self.config,
            "stats": self.stats,
            "categories": self.categories.labels(),
            "codec_manifest_hash": self.codec_manifest_hash,
            "config_hash": self.config_hash(),
        });
        std::fs::write(
            crate::shape_codec::manifest_path(path),
            serde_json::to_string(&manifest).expect("manifest serializes") + "\n",
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, AdamState, u64)> {
        let manifest_text = std::fs::read_to_string(crate::shape_codec::manifest_path(path))
            .map_err(|e| Error::Data(format!("missing generator manifest: {e}")))?;
        let manifest: serde_json::Value = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::Data(format!("bad generator manifest: {e}")))?;
        let config: GeneratorConfig = serde_json::from_value(manifest["config"].clone())
            .map_err(|e| Error::Data(format!("bad generator config: {e}")))?;
        let stats: CorpusStats = serde_json::from_value(manifest["stats"].clone())
            .map_err(|e| Error::Data(format!("bad generator stats: {e}")))?;
        let labels: Vec<String> = serde_json::from_value(manifest["categories"].clone())
            .map_err(|e| Error::Data(format!("bad category table: {e}")))?;
        let categories = CategoryTable::from_labels(labels)?;
        let codec_manifest_hash = manifest["codec_manifest_hash"]
            .as_str()
            .unwrap_or_default()
            .to_string();

        let chunks = read_chunks(path)?;
        let param_chunks: Vec<Chunk> = chunks
            .iter()
            .filter(|c| !c.name.starts_with("opt.") && c.name != "train.epoch")
            .cloned()
            .collect();
        let params = ParamStore::from_chunks(&param_chunks);
        let mut adam = AdamState::new(config.lr);
        adam.restore_chunks(&chunks);
        let epoch = chunks
            .iter()
            .find(|c| c.name == "train.epoch")
            .map(|c| c.payload[0] as u64)
            .unwrap_or(0);
        Ok((GeneratorModel { config, params, stats, categories, codec_manifest_hash }, adam, epoch))
    }
}

fn init_params(c: &GeneratorConfig, n_categories: usize, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    encoders::init_encoder_params(&mut store, c, n_categories, rng);

    // Learnable query token and the q-hat projection.
    store.insert(
        "scene.query",
        crate::numerics::Tensor::glorot(vec![1, c.token_width], (1, c.token_width), rng),
    );
    for i in 0..c.scene_layers {
        init_attn_block(&mut store, &format!("scene.attn{i}"), c.scene_spec(), rng);
    }
    init_linear(&mut store, "scene.qhat", c.token_width, c.query_dim, rng);

    attributes::init_attribute_params(&mut store, c, n_categories, rng);
    shape_gen::init_shape_params(&mut store, c, n_categories, rng);
    store
}

/// Transformer over {floor token, context tokens, learnable query}; returns
/// q-hat. No positional encoding anywhere, so context order cannot matter.
pub fn scene_forward(
    tape: &mut Tape,
    store: &ParamStore,
    config: &GeneratorConfig,
    floor_token: ValueId,
    context_tokens: &[ValueId],
) -> ValueId {
    let query = tape.param("scene.query", store);
    let mut parts = vec![floor_token];
    parts.extend_from_slice(context_tokens);
    parts.push(query);
    let mut x = tape.concat(&parts, 0);
    for i in 0..config.scene_layers {
        x = attn_block(tape, store, &format!("scene.attn{i}"), config.scene_spec(), x, None);
    }
    let n = tape.shape(x)[0];
    let at_query = tape.slice(x, 0, n - 1, 1);
    linear(tape, store, "scene.qhat", at_query)
}
