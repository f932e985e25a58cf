//! Two-stage indoor scene synthesis at desk scale.
//!
//! Stage one is a vector-quantized anchor-latent codec: furniture surfaces
//! are summarized as M anchor points with quantized local features, decoded
//! back into an occupancy field. Stage two is a permutation-invariant
//! autoregressive transformer that generates scene layouts (category, box,
//! yaw) together with each object's anchor latents, conditioned on a floor
//! mask. A procedural CSG furniture corpus with analytic occupancy replaces
//! external mesh datasets, and an evaluation harness measures collision
//! rate, category KL, within-scene shape consistency, and cross-run
//! diversity.
//!
//! See the `examples/` directory for one runnable example per capability,
//! or the `roomsynth` binary for the file-driven pipeline
//! (`gen-data` / `train-codec` / `train-scene` / `generate` / `complete` /
//! `correct` / `edit` / `eval`).

pub mod cli;
pub mod config;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod shape_codec;
pub mod transformer;
pub mod numerics;
pub mod scene_generator;
pub mod scene_model;
pub mod util;

pub use error::{Error, Result};
