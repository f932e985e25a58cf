//! Inference: scene generation and completion, leave-one-out likelihoods,
//! mismatch correction, anchor-latent mixing.

use rand_chacha::ChaCha8Rng;

use super::attributes::{sample_attributes, shape_condition, AttributeValues};
use super::encoders::encode_floor;
use super::shape_gen::sample_anchor_latents;
use super::train::{normalized_values, object_loss_on_tape};
use super::{scene_forward, GeneratorModel};
use crate::error::{Error, Result};
use crate::numerics::Tape;
use crate::scene_model::{denormalize_instance, FloorPlanMask, FurnitureInstance, Scene};
use crate::shape_codec::AnchorLatentSet;

/// Assemble a world-space instance from sampled normalized attributes.
fn instance_from_samples(
    model: &GeneratorModel,
    values: &AttributeValues,
    latents: AnchorLatentSet,
) -> FurnitureInstance {
    let (t, s, r) =
        denormalize_instance(&values.translation, &values.size, values.rotation, &model.stats);
    FurnitureInstance {
        category: model.categories.label(values.category).to_string(),
        translation: t,
        size: s,
        yaw: r,
        shape: latents,
    }
}

fn sample_next_object(
    model: &GeneratorModel,
    mask: &FloorPlanMask,
    context: &[&FurnitureInstance],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<FurnitureInstance>> {
    let c = &model.config;
    let cats = &model.categories;
    let mut tape = Tape::new();
    let floor_token = encode_floor(&mut tape, &model.params, c, mask)?;
    let tokens =
        super::train::context_token_list(&mut tape, &model.params, c, cats, &model.stats, context)?;
    let qhat = scene_forward(&mut tape, &model.params, c, floor_token, &tokens);
    let banned = [cats.start_index()];
    let values = sample_attributes(
        &mut tape,
        &model.params,
        c,
        cats.len(),
        qhat,
        &banned,
        temperature,
        rng,
    )?;
    tape.ensure_finite()?;
    if values.category == cats.end_index() {
        return Ok(None);
    }
    let cond = shape_condition(&mut tape, cats.len(), qhat, &values);
    let cond_data = tape.data(cond).to_vec();
    let latents = sample_anchor_latents(&model.params, c, cond_data, temperature, rng)?;
    Ok(Some(instance_from_samples(model, &values, latents)))
}

/// Autoregressive scene generation from a floor mask. Stops on a sampled
/// 'end' or after `max_objects`.
pub fn generate_scene(
    mask: &FloorPlanMask,
    model: &GeneratorModel,
    rng: &mut ChaCha8Rng,
    max_objects: usize,
    temperature: f64,
) -> Result<Scene> {
    if max_objects == 0 {
        return Err(Error::Contract("max_objects must be >= 1".to_string()));
    }
    let mut furniture: Vec<FurnitureInstance> = Vec::new();
    while furniture.len() < max_objects {
        let context: Vec<&FurnitureInstance> = furniture.iter().collect();
        match sample_next_object(model, mask, &context, temperature, rng)? {
            Some(inst) => furniture.push(inst),
            None => break,
        }
    }
    Ok(Scene { room_type: "room".to_string(), floor: mask.clone(), furniture })
}

/// Scene completion: the partial scene's objects are kept verbatim and new
/// objects are generated conditioned on them.
pub fn complete_scene(
    partial: &Scene,
    model: &GeneratorModel,
    rng: &mut ChaCha8Rng,
    max_objects: usize,
    temperature: f64,
) -> Result<Scene> {
    let mut out = partial.clone();
    while out.furniture.len() < max_objects {
        let context: Vec<&FurnitureInstance> = out.furniture.iter().collect();
        match sample_next_object(model, &out.floor, &context, temperature, rng)? {
            Some(inst) => out.furniture.push(inst),
            None => break,
        }
    }
    Ok(out)
}

/// Log-likelihood of each object conditioned on all the others (teacher
/// mode); low values flag mismatched furniture.
pub fn leave_one_out_likelihood(scene: &Scene, model: &GeneratorModel) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(scene.furniture.len());
    for j in 0..scene.furniture.len() {
        let context: Vec<&FurnitureInstance> = scene
            .furniture
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, f)| f)
            .collect();
        let mut tape = Tape::new();
        let (_, parts) = object_loss_on_tape(
            &mut tape,
            &model.params,
            &model.config,
            &model.categories,
            &model.stats,
            scene,
            &context,
            Some(&scene.furniture[j]),
        )?;
        out.push(-parts.total);
    }
    Ok(out)
}

/// Linear-interpolated percentile of a sample (NaN-free input).
fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (pct / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Flag objects below the likelihood percentile and resample their anchor
/// latents conditioned on their own (unchanged) box attributes plus the rest
/// of the scene. Returns the corrected scene and the flagged indices.
pub fn correct_mismatch(
    scene: &Scene,
    model: &GeneratorModel,
    rng: &mut ChaCha8Rng,
    threshold_pct: f64,
    temperature: f64,
) -> Result<(Scene, Vec<usize>)> {
    if scene.furniture.is_empty() {
        return Ok((scene.clone(), Vec::new()));
    }
    let lls = leave_one_out_likelihood(scene, model)?;
    let threshold = percentile(&lls, threshold_pct);
    let flagged: Vec<usize> =
        (0..lls.len()).filter(|&i| lls[i] < threshold).collect();

    let mut out = scene.clone();
    for &j in &flagged {
        let context: Vec<&FurnitureInstance> = scene
            .furniture
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, f)| f)
            .collect();
        let mut tape = Tape::new();
        let floor_token = encode_floor(&mut tape, &model.params, &model.config, &scene.floor)?;
        let tokens = super::train::context_token_list(
            &mut tape,
            &model.params,
            &model.config,
            &model.categories,
            &model.stats,
            &context,
        )?;
        let qhat = scene_forward(&mut tape, &model.params, &model.config, floor_token, &tokens);
        // Condition on the object's own kept box attributes.
        let values = normalized_values(&scene.furniture[j], &model.stats, &model.categories)?;
        let cond = shape_condition(&mut tape, model.categories.len(), qhat, &values);
        let cond_data = tape.data(cond).to_vec();
        tape.ensure_finite()?;
        let latents =
            sample_anchor_latents(&model.params, &model.config, cond_data, temperature, rng)?;
        out.furniture[j].shape = latents;
    }
    Ok((out, flagged))
}

/// Region-based mixing: anchors of `a` outside the box joined with anchors
/// of `b` inside it. Both sets must come from the same codebook.
pub fn mix_anchor_latents(
    a: &AnchorLatentSet,
    b: &AnchorLatentSet,
    region_lo: [f64; 3],
    region_hi: [f64; 3],
) -> Result<AnchorLatentSet> {
    let inside = |p: &[f64; 3]| {
        (0..3).all(|i| p[i] >= region_lo[i] && p[i] <= region_hi[i])
    };
    let mut pairs: Vec<([f64; 3], usize)> = Vec::new();
    for (anchor, code) in a.pairs() {
        if !inside(&anchor) {
            pairs.push((anchor, code));
        }
    }
    for (anchor, code) in b.pairs() {
        if inside(&anchor) {
            pairs.push((anchor, code));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Contract(
            "anchor-latent mix produced an empty set".to_string(),
        ));
    }
    Ok(AnchorLatentSet::new(pairs))
}

/// Probability assigned to 'end' by the category head for a given context;
/// used to inspect the stopping behaviour of trained models.
pub fn end_probability(
    model: &GeneratorModel,
    mask: &FloorPlanMask,
    context: &[&FurnitureInstance],
) -> Result<f64> {
    let c = &model.config;
    let mut tape = Tape::new();
    let floor_token = encode_floor(&mut tape, &model.params, c, mask)?;
    let tokens = super::train::context_token_list(
        &mut tape,
        &model.params,
        c,
        &model.categories,
        &model.stats,
        context,
    )?;
    let qhat = scene_forward(&mut tape, &model.params, c, floor_token, &tokens);
    let pred =
        super::attributes::extract_attributes(&mut tape, &model.params, c, model.categories.len(), qhat, None);
    let probs = tape.softmax(pred.category_logits);
    Ok(tape.data(probs)[model.categories.end_index()])
}

impl GeneratorModel {
    /// Convenience wrapper used by the CLI and the evaluation harness.
    pub fn generate(
        &self,
        mask: &FloorPlanMask,
        rng: &mut ChaCha8Rng,
        max_objects: usize,
    ) -> Result<Scene> {
        generate_scene(mask, self, rng, max_objects, 1.0)
    }
}

#[cfg(test)]
mod percentile_tests {
    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(super::percentile(&v, 0.0), 1.0);
        assert_eq!(super::percentile(&v, 100.0), 5.0);
        assert_eq!(super::percentile(&v, 50.0), 3.0);
        assert_eq!(super::percentile(&v, 25.0), 2.0);
        assert_eq!(super::percentile(&v, 20.0), 1.8);
    }
}
