//! Fisher information traces: mean squared norm of the per-parameter
//! gradient of the log predictive probability, grouped per layer and weight
//! kind, with inputs truncated to a timestep prefix.

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::learn::decolle::{decolle_predict, decolle_sequence_deltas, DecolleReadouts};
use crate::learn::eprop::{eprop_gradients, FeedbackMatrices};
use crate::learn::{bptt::bptt_gradients, softmax, Gradients, LossSpec};
use crate::scalar::Scalar;
use crate::snn::{forward, Network};
use crate::tensor::SpikeTensor;
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightGroupKind {
    Linear,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherGroup {
    pub layer: usize,
    pub kind: WeightGroupKind,
    pub value: f64,
}

/// Per-group non-negative importance scores; when `normalized`, the values
/// sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherProfile {
    pub groups: Vec<FisherGroup>,
    pub normalized: bool,
}

impl FisherProfile {
    pub fn total(&self) -> f64 {
        self.groups.iter().map(|g| g.value).sum()
    }
}

/// Which learning rule supplies the log-probability gradient.
#[derive(Debug, Clone)]
pub enum GradSource<'a, F: Scalar> {
    Bptt,
    Eprop(&'a FeedbackMatrices<F>),
    Decolle(&'a DecolleReadouts<F>),
}

/// How the output variable `y` is chosen for the expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YMode {
    /// Draw one `y` per sample from the model's predictive distribution.
    Sampled { seed: u64 },
    /// Exact expectation: enumerate classes weighted by the predictive
    /// distribution (exact for any class count, costs one gradient per
    /// class).
    Exact,
    /// The model's argmax prediction.
    Argmax,
    /// The dataset label.
    Label,
}

/// Fisher trace at timestep `upto_t`: per layer and weight group, the mean
/// over samples of the squared gradient norm of `log f_w(y | x_{<=t})`.
pub fn fisher_trace<F: Scalar>(
    net: &Network<F>,
    data: &Dataset<F>,
    upto_t: usize,
    grad_source: &GradSource<'_, F>,
    y_mode: YMode,
    normalize: bool,
) -> Result<FisherProfile> {
    if data.is_empty() {
        return Err(CoreError::Empty("fisher dataset"));
    }
    let loss = LossSpec::default(); // cross-entropy: its gradient is -grad log f
    let mut sums: Vec<(usize, WeightGroupKind, f64)> = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        sums.push((l, WeightGroupKind::Linear, 0.0));
        if layer.is_recurrent() {
            sums.push((l, WeightGroupKind::Recurrent, 0.0));
        }
    }
    let mut rng = match y_mode {
        YMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    for (tensor, label) in data.samples() {
        let input = tensor.truncated(upto_t)?;
        let probs = predictive_distribution(net, &input, grad_source)?;
        let choices: Vec<(usize, f64)> = match y_mode {
            YMode::Exact => probs
                .iter()
                .enumerate()
                .map(|(k, &p)| (k, p.to_f64_c()))
                .collect(),
            YMode::Argmax => vec![(crate::learn::argmax(&probs), 1.0)],
            YMode::Label => vec![(*label, 1.0)],
            YMode::Sampled { .. } => {
                let r = rng.as_mut().expect("sampling rng");
                vec![(sample_class(&probs, r), 1.0)]
            }
        };
        for (y, weight) in choices {
            if weight == 0.0 {
                continue;
            }
            let grads = gradient_of_neg_log_prob(net, &input, y, grad_source, &loss)?;
            for entry in sums.iter_mut() {
                let g = &grads.layers[entry.0];
                let sq = match entry.1 {
                    WeightGroupKind::Linear => squared_norm(g.dw.iter()),
                    WeightGroupKind::Recurrent => {
                        g.dv.as_ref().map_or(0.0, |dv| squared_norm(dv.iter()))
                    }
                };
                entry.2 += weight * sq;
            }
        }
    }

    let n = data.len() as f64;
    let mut groups: Vec<FisherGroup> = sums
        .into_iter()
        .map(|(layer, kind, sum)| FisherGroup {
            layer,
            kind,
            value: sum / n,
        })
        .collect();

    if normalize {
        let total: f64 = groups.iter().map(|g| g.value).sum();
        if total <= 0.0 {
            return Err(CoreError::Diverged(
                "fisher profile is identically zero, normalization undefined".into(),
            ));
        }
        for g in &mut groups {
            g.value /= total;
        }
    }
    Ok(FisherProfile {
        groups,
        normalized: normalize,
    })
}

fn squared_norm<'a, F: Scalar, I: Iterator<Item = &'a F>>(iter: I) -> f64 {
    iter.map(|&x| {
        let v = x.to_f64_c();
        v * v
    })
    .sum()
}

fn predictive_distribution<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    grad_source: &GradSource<'_, F>,
) -> Result<Array1<F>> {
    let scores = match grad_source {
        GradSource::Decolle(readouts) => decolle_predict(net, readouts, input)?,
        _ => forward(net, input, false)?.0,
    };
    Ok(softmax(&scores))
}

fn sample_class<F: Scalar>(probs: &Array1<F>, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p.to_f64_c();
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

fn gradient_of_neg_log_prob<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    y: usize,
    grad_source: &GradSource<'_, F>,
    loss: &LossSpec,
) -> Result<Gradients<F>> {
    match grad_source {
        GradSource::Bptt => Ok(bptt_gradients(net, input, y, loss)?.0),
        GradSource::Eprop(fb) => Ok(eprop_gradients(net, input, y, fb, loss)?.0),
        GradSource::Decolle(readouts) => {
            // local-rule deltas with the pseudo-target set to y and unit
            // rate; sign is irrelevant under the squared norm
            Ok(decolle_sequence_deltas(net, input, y, readouts, loss, F::one())?.deltas)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{
        init_network, LayerSpec, LifParams, NetworkConfig, ReadoutMode, SurrogateSpec,
    };
    use ndarray::array;

    fn one_sample_dataset(x: f64) -> Dataset<f64> {
        let mut t = SpikeTensor::zeros(1, 1);
        t.set(0, 0, x);
        Dataset::new(vec![(t, 0)], 2).unwrap()
    }

    #[test]
    fn zero_network_profile_is_zero_and_normalization_errors() {
        let cfg = NetworkConfig {
            input_size: 1,
            layers: vec![LayerSpec::ff(2)],
            lif: LifParams::new(1.0f64, 1.0, 1.0),
            surrogate: SurrogateSpec::default(),
            readout_mode: ReadoutMode::MembraneSum,
        };
        let mut net = init_network(&cfg, 0).unwrap();
        net.layers[0].w.fill(0.0);
        let data = {
            let t = SpikeTensor::zeros(1, 1);
            Dataset::new(vec![(t, 0)], 2).unwrap()
        };
        let profile =
            fisher_trace(&net, &data, 1, &GradSource::Bptt, YMode::Exact, false).unwrap();
        assert!(profile.groups.iter().all(|g| g.value == 0.0));
        assert!(
            fisher_trace(&net, &data, 1, &GradSource::Bptt, YMode::Exact, true).is_err()
        );
    }

    #[test]
    fn upto_t_out_of_range_is_an_error() {
        let cfg = NetworkConfig {
            input_size: 1,
            layers: vec![LayerSpec::ff(2)],
            lif: LifParams::new(0.9f64, 0.5, 1.0),
            surrogate: SurrogateSpec::default(),
            readout_mode: ReadoutMode::MembraneSum,
        };
        let net = init_network(&cfg, 0).unwrap();
        let data = one_sample_dataset(1.0);
        assert!(fisher_trace(&net, &data, 2, &GradSource::Bptt, YMode::Exact, false).is_err());
    }

    #[test]
    fn normalized_profile_sums_to_one() {
        let cfg = NetworkConfig {
            input_size: 3,
            layers: vec![LayerSpec::rec(4), LayerSpec::ff(2)],
            lif: LifParams::new(0.9f64, 0.5, 0.3),
            surrogate: SurrogateSpec::default(),
            readout_mode: ReadoutMode::MembraneSum,
        };
        let net = init_network(&cfg, 5).unwrap();
        let mut t = SpikeTensor::zeros(4, 3);
        for ti in 0..4 {
            t.set(ti, ti % 3, 1.0);
        }
        let data = Dataset::new(vec![(t, 1)], 2).unwrap();
        let profile =
            fisher_trace(&net, &data, 4, &GradSource::Bptt, YMode::Exact, true).unwrap();
        assert!((profile.total() - 1.0).abs() < 1e-9);
        assert!(profile.groups.iter().all(|g| g.value >= 0.0));
        assert_eq!(profile.groups.len(), 3); // lin0, rec0, lin1
    }

    #[test]
    fn logistic_toy_matches_closed_form() {
        // Single input channel, one integrating layer with two class rows,
        // T = 1: scores are z = (w00 x, w10 x). With p = softmax(z)_0 the
        // exact Fisher over both rows is 2 p (1-p) x^2 — twice the textbook
        // single-parameter logistic value because the symmetric softmax head
        // carries the gradient on both class rows.
        let x = 0.8;
        let w = 1.3;
        let cfg = NetworkConfig {
            input_size: 1,
            layers: vec![LayerSpec::ff(2)],
            lif: LifParams::new(1.0f64, 1.0, 1.0),
            surrogate: SurrogateSpec::default(),
            readout_mode: ReadoutMode::MembraneSum,
        };
        let mut net = init_network(&cfg, 0).unwrap();
        net.layers[0].w = array![[w], [0.0]];
        let data = one_sample_dataset(x);
        let profile =
            fisher_trace(&net, &data, 1, &GradSource::Bptt, YMode::Exact, false).unwrap();
        let p = 1.0 / (1.0 + (-w * x).exp());
        let analytic = 2.0 * p * (1.0 - p) * x * x;
        assert!(
            (profile.groups[0].value - analytic).abs() < 1e-6,
            "got {}, want {analytic}",
            profile.groups[0].value
        );
    }

    #[test]
    fn group_with_no_path_to_output_has_zero_fisher() {
        let cfg = NetworkConfig {
            input_size: 2,
            layers: vec![LayerSpec::rec(3), LayerSpec::ff(2)],
            lif: LifParams::new(0.9f64, 0.5, 0.4),
            surrogate: SurrogateSpec::default(),
            readout_mode: ReadoutMode::MembraneSum,
        };
        let mut net = init_network(&cfg, 2).unwrap();
        // cut the only path from layer 0 to the scores
        net.layers[1].w.fill(0.0);
        let mut t = SpikeTensor::zeros(3, 2);
        t.set(0, 0, 1.0);
        t.set(1, 1, 1.0);
        let data = Dataset::new(vec![(t, 0)], 2).unwrap();
        let profile =
            fisher_trace(&net, &data, 3, &GradSource::Bptt, YMode::Exact, false).unwrap();
        let lin0 = profile.groups.iter().find(|g| g.layer == 0).unwrap();
        let rec0 = profile
            .groups
            .iter()
            .find(|g| g.layer == 0 && g.kind == WeightGroupKind::Recurrent)
            .unwrap();
        assert_eq!(lin0.value, 0.0);
        assert_eq!(rec0.value, 0.0);
    }
}
