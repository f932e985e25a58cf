//! Run configuration: a single JSON document with a "preset" resolving
//! defaults ("desk" or "paper") and per-section overrides. Unknown keys are
//! rejected; every run logs the resolved configuration and its hash.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_generator::GeneratorConfig;
use crate::scene_model::CorpusSpec;
use crate::shape_codec::CodecConfig;
use crate::util::fnv1a64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Scenes generated per evaluation.
    pub n: usize,
    pub max_objects: usize,
    pub diversity_runs: usize,
    pub diversity_masks: usize,
    pub consistency_category: String,
    pub diversity_category: String,
    pub temperature: f64,
}

impl EvalConfig {
    fn desk() -> Self {
        EvalConfig {
            n: 100,
            max_objects: 13,
            diversity_runs: 10,
            diversity_masks: 10,
            consistency_category: "chair".to_string(),
            diversity_category: "chair".to_string(),
            temperature: 1.0,
        }
    }

    fn paper() -> Self {
        EvalConfig { n: 1000, ..Self::desk() }
    }
}

/// Data-generation section: what `gen-data` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// "shapes" (codec training corpus) or "scenes" (stage-two corpus).
    pub kind: String,
    /// Codec checkpoint path; required for scene corpora.
    pub codec: Option<String>,
    /// Shapes per category for shape corpora.
    pub shapes_per_category: usize,
}

impl DataConfig {
    fn desk() -> Self {
        DataConfig { kind: "scenes".to_string(), codec: None, shapes_per_category: 8 }
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub preset: String,
    pub codec: CodecConfig,
    pub scene: GeneratorConfig,
    pub corpus: CorpusSpec,
    pub eval: EvalConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn desk() -> Self {
        Config {
            preset: "desk".to_string(),
            codec: CodecConfig::desk(),
            scene: GeneratorConfig::desk(),
            corpus: CorpusSpec::default(),
            eval: EvalConfig::desk(),
            data: DataConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        Config {
            preset: "paper".to_string(),
            codec: CodecConfig::paper(),
            scene: GeneratorConfig::paper(),
            corpus: CorpusSpec::default(),
            eval: EvalConfig::paper(),
            data: DataConfig::desk(),
        }
    }

    /// Parse a config document: `{"preset": "desk", "codec": {...}, ...}`
    /// where every section holds partial overrides. Unknown keys anywhere
    /// are an error.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ConfigDoc = {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| Error::Config(format!("{} at {}", e.inner(), e.path())))?
        };
        let mut resolved = match doc.preset.as_deref().unwrap_or("desk") {
            "desk" => Config::desk(),
            "paper" => Config::paper(),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        if let Some(overrides) = doc.codec {
            apply_overrides(&mut resolved.codec, overrides, "codec")?;
        }
        if let Some(overrides) = doc.scene {
            apply_overrides(&mut resolved.scene, overrides, "scene")?;
        }
        if let Some(overrides) = doc.corpus {
            apply_overrides(&mut resolved.corpus, overrides, "corpus")?;
        }
        if let Some(overrides) = doc.eval {
            apply_overrides(&mut resolved.eval, overrides, "eval")?;
        }
        if let Some(overrides) = doc.data {
            apply_overrides(&mut resolved.data, overrides, "data")?;
        }
        Ok(resolved)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

/// Raw document: all sections optional, carrying partial overrides as JSON.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    preset: Option<String>,
    codec: Option<serde_json::Value>,
    scene: Option<serde_json::Value>,
    corpus: Option<serde_json::Value>,
    eval: Option<serde_json::Value>,
    data: Option<serde_json::Value>,
}

/// Merge a partial JSON object over a resolved section: serialize the
/// section, overwrite the given keys (rejecting unknown ones), deserialize
/// back.
fn apply_overrides<T: Serialize + for<'de> Deserialize<'de>>(
    section: &mut T,
    overrides: serde_json::Value,
    name: &str,
) -> Result<()> {
    let serde_json::Value::Object(overrides) = overrides else {
        return Err(Error::Config(format!("section {name:?} must be an object")));
    };
    let mut base = serde_json::to_value(&*section).expect("section serializes");
    let obj = base.as_object_mut().expect("section is an object");
    for (key, value) in overrides {
        if !obj.contains_key(&key) {
            return Err(Error::Config(format!("unknown key {name}.{key}")));
        }
        obj.insert(key, value);
    }
    *section = serde_json::from_value(base)
        .map_err(|e| Error::Config(format!("section {name:?}: {e}")))?;
    Ok(())
}
