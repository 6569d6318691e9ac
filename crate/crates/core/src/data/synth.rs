//! Synthetic spike-pattern classification task: each class is a fixed random
//! spatiotemporal template, samples are jittered copies. Linearly separable
//! at zero jitter, and a deterministic function of the seed.

use super::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::SpikeTensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub t_steps: usize,
    pub channels: usize,
    /// Probability of flipping each template entry per sample.
    pub jitter: f64,
    /// Spike density of the class templates.
    pub density: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            n_per_class: 100,
            t_steps: 20,
            channels: 64,
            jitter: 0.05,
            density: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.n_per_class == 0 || self.t_steps == 0 || self.channels == 0 {
            return Err(CoreError::InvalidParam(
                "synthetic task parameters must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.jitter) || !(0.0..=1.0).contains(&self.density) {
            return Err(CoreError::InvalidParam(
                "jitter and density must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn template_rng(spec: &SynthSpec) -> ChaCha8Rng {
    // Separate stream from the jitter RNG so templates only depend on the
    // seed and shape parameters.
    ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7465_6d70_6c61_7465)
}

/// The class templates for a given spec (binary rasters, deterministic).
pub fn synth_templates<F: Scalar>(spec: &SynthSpec) -> Result<Vec<SpikeTensor<F>>> {
    spec.validate()?;
    let mut rng = template_rng(spec);
    let templates = (0..spec.classes)
        .map(|_| {
            let mut t = SpikeTensor::zeros(spec.t_steps, spec.channels);
            for ti in 0..spec.t_steps {
                for c in 0..spec.channels {
                    if rng.random_bool(spec.density) {
                        t.set(ti, c, F::one());
                    }
                }
            }
            t
        })
        .collect();
    Ok(templates)
}

/// Generates the jittered dataset: `classes * n_per_class` samples, each a
/// template with independent entry flips at probability `jitter`.
pub fn synth_pattern_dataset<F: Scalar>(spec: &SynthSpec) -> Result<Dataset<F>> {
    let templates = synth_templates::<F>(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6a69_7474_6572);
    let mut samples = Vec::with_capacity(spec.classes * spec.n_per_class);
    for (label, template) in templates.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            let mut sample = template.clone();
            if spec.jitter > 0.0 {
                for t in 0..spec.t_steps {
                    for c in 0..spec.channels {
                        if rng.random_bool(spec.jitter) {
                            let flipped = if sample.get(t, c) == F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            };
                            sample.set(t, c, flipped);
                        }
                    }
                }
            }
            samples.push((sample, label));
        }
    }
    Dataset::new(samples, spec.classes)
}
