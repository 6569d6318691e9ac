//! Targeted backdoor poisoning: a 4-pixel trigger stamped at every timestep,
//! deterministic source-class poisoning, and ASR evaluation.

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::SpikeTensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Four channel locations stamped to a fixed intensity at every timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec<F: Scalar> {
    pub pixel_locations: [usize; 4],
    pub value: F,
}

impl<F: Scalar> TriggerSpec<F> {
    /// Default geometry: a 2x2 block in the top-left corner of the flattened
    /// channel grid of the given row width, at full intensity.
    pub fn corner_block(grid_width: usize) -> Self {
        Self {
            pixel_locations: [0, 1, grid_width, grid_width + 1],
            value: F::one(),
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        for &p in &self.pixel_locations {
            if p >= channels {
                return Err(CoreError::OutOfRange {
                    context: "trigger pixel location",
                    index: p,
                    bound: channels,
                });
            }
        }
        Ok(())
    }
}

/// Stamps the trigger: the 4 channels are set to the trigger value at every
/// timestep, all other entries untouched. Idempotent.
pub fn apply_trigger<F: Scalar>(
    sample: &SpikeTensor<F>,
    trig: &TriggerSpec<F>,
) -> Result<SpikeTensor<F>> {
    trig.validate(sample.channels())?;
    let mut out = sample.clone();
    for t in 0..out.t_steps() {
        for &p in &trig.pixel_locations {
            out.set(t, p, trig.value);
        }
    }
    Ok(out)
}

/// Source class, target label, poison fraction and trigger for one backdoor
/// campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan<F: Scalar> {
    pub source: usize,
    pub target: usize,
    pub rate: f64,
    pub trigger: TriggerSpec<F>,
    pub seed: u64,
}

impl<F: Scalar> PoisonPlan<F> {
    fn validate(&self) -> Result<()> {
        if self.source == self.target {
            return Err(CoreError::InvalidParam(
                "poison source and target classes must differ".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(CoreError::InvalidParam(format!(
                "poison rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        Ok(())
    }
}

/// Poisons `floor(rate * |source|)` source-class samples: trigger stamped,
/// label switched to the target. Selection is a seed-ordered shuffle without
/// replacement, so identical (seed, plan) gives identical bytes.
pub fn poison_dataset<F: Scalar>(data: &Dataset<F>, plan: &PoisonPlan<F>) -> Result<Dataset<F>> {
    plan.validate()?;
    let source_indices = data.indices_of_class(plan.source);
    if source_indices.is_empty() {
        return Err(CoreError::Empty("source class in poisoning dataset"));
    }
    let n_poison = (plan.rate * source_indices.len() as f64).floor() as usize;
    let mut order = source_indices;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    order.shuffle(&mut rng);

    let mut poisoned = data.clone();
    for &idx in order.iter().take(n_poison) {
        let triggered = apply_trigger(&data.samples()[idx].0, &plan.trigger)?;
        poisoned.replace(idx, triggered, plan.target)?;
    }
    Ok(poisoned)
}

/// ASR and clean accuracy of a predictor under a trigger campaign.
///
/// ASR is the fraction of triggered source-class test samples predicted as
/// the target class; clean accuracy is measured on the untouched test set.
/// The two views never mix.
pub fn attack_success_rate<F: Scalar>(
    predict: impl Fn(&SpikeTensor<F>) -> Result<usize>,
    test: &Dataset<F>,
    plan: &PoisonPlan<F>,
) -> Result<(f64, f64)> {
    plan.validate()?;
    let source_indices = test.indices_of_class(plan.source);
    if source_indices.is_empty() {
        return Err(CoreError::Empty("source class in test dataset"));
    }

    let mut hits = 0usize;
    for &idx in &source_indices {
        let triggered = apply_trigger(&test.samples()[idx].0, &plan.trigger)?;
        if predict(&triggered)? == plan.target {
            hits += 1;
        }
    }
    let asr = hits as f64 / source_indices.len() as f64;

    let mut correct = 0usize;
    for (tensor, label) in test.samples() {
        if predict(tensor)? == *label {
            correct += 1;
        }
    }
    let clean_accuracy = correct as f64 / test.len() as f64;
    Ok((asr, clean_accuracy))
}
