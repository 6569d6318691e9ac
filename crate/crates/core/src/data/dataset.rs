//! Labeled spike-raster collections and deterministic batch iteration.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::SpikeTensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniformly-shaped labeled samples. Immutable after construction and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    samples: Vec<(SpikeTensor<F>, usize)>,
    n_classes: usize,
    channels: usize,
    t_steps: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(samples: Vec<(SpikeTensor<F>, usize)>, n_classes: usize) -> Result<Self> {
        let first = samples.first().ok_or(CoreError::Empty("dataset"))?;
        let (t_steps, channels) = (first.0.t_steps(), first.0.channels());
        for (tensor, label) in &samples {
            if tensor.t_steps() != t_steps || tensor.channels() != channels {
                return Err(CoreError::DimensionMismatch {
                    context: "dataset sample shape",
                    expected: channels,
                    actual: tensor.channels(),
                });
            }
            if *label >= n_classes {
                return Err(CoreError::OutOfRange {
                    context: "dataset label",
                    index: *label,
                    bound: n_classes,
                });
            }
        }
        Ok(Self {
            samples,
            n_classes,
            channels,
            t_steps,
        })
    }

    pub fn samples(&self) -> &[(SpikeTensor<F>, usize)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    /// Indices of all samples carrying `label`.
    pub fn indices_of_class(&self, label: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| *l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Replaces one sample; shape and label range are re-checked.
    pub(crate) fn replace(
        &mut self,
        index: usize,
        tensor: SpikeTensor<F>,
        label: usize,
    ) -> Result<()> {
        if tensor.t_steps() != self.t_steps || tensor.channels() != self.channels {
            return Err(CoreError::DimensionMismatch {
                context: "dataset replacement shape",
                expected: self.channels,
                actual: tensor.channels(),
            });
        }
        if label >= self.n_classes {
            return Err(CoreError::OutOfRange {
                context: "dataset replacement label",
                index: label,
                bound: self.n_classes,
            });
        }
        self.samples[index] = (tensor, label);
        Ok(())
    }
}

/// Deterministic shuffled minibatches. The final partial batch is included.
pub fn batches<F: Scalar>(
    data: &Dataset<F>,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<BatchIter<'_, F>> {
    if batch_size == 0 {
        return Err(CoreError::InvalidParam("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    order.shuffle(&mut rng);
    Ok(BatchIter {
        data,
        order,
        batch_size,
        cursor: 0,
    })
}

pub struct BatchIter<'a, F: Scalar> {
    data: &'a Dataset<F>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a, F: Scalar> Iterator for BatchIter<'a, F> {
    type Item = Vec<&'a (SpikeTensor<F>, usize)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end]
            .iter()
            .map(|&i| &self.data.samples[i])
            .collect();
        self.cursor = end;
        Some(batch)
    }
}
