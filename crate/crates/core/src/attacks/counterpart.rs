//! Rate-based ANN counterpart of a spiking network, used to obtain input
//! gradients for FGSM when the spiking forward itself is not differentiable.
//!
//! The counterpart snapshots the weight matrices, replaces the LIF
//! nonlinearity with a rectified-linear transfer on the per-channel mean
//! spike intensity, and folds the recurrent contribution once: with
//! `a = W r_in`, the folded pre-activation is `a + V relu(a)`. Hidden layers
//! apply ReLU; the output stage is linear (or a fixed readout map when one
//! is attached).

use crate::error::{CoreError, Result};
use crate::learn::{loss_and_grad, LossSpec};
use crate::scalar::Scalar;
use crate::snn::Network;
use ndarray::{Array1, Array2};

#[derive(Debug, Clone)]
struct RateLayer<F: Scalar> {
    w: Array2<F>,
    v: Option<Array2<F>>,
}

/// Snapshot ANN standing in for a spiking network.
#[derive(Debug, Clone)]
pub struct RateModel<F: Scalar> {
    layers: Vec<RateLayer<F>>,
    /// Fixed map from last-layer rates to class scores; present for
    /// networks whose classification goes through an external readout.
    output_map: Option<Array2<F>>,
}

/// Builds the counterpart by value: mutating the spiking network afterwards
/// does not affect the snapshot.
pub fn build_ann_counterpart<F: Scalar>(net: &Network<F>) -> RateModel<F> {
    RateModel {
        layers: net
            .layers
            .iter()
            .map(|l| RateLayer {
                w: l.w.clone(),
                v: l.v.clone(),
            })
            .collect(),
        output_map: None,
    }
}

fn relu<F: Scalar>(a: &Array1<F>) -> Array1<F> {
    a.mapv(|x| x.max(F::zero()))
}

impl<F: Scalar> RateModel<F> {
    /// Attaches a fixed `[n_classes x n_last]` readout; all network layers
    /// then use the ReLU transfer and scores are `G r_last`.
    pub fn with_output_map(mut self, g: Array2<F>) -> Self {
        self.output_map = Some(g);
        self
    }

    pub fn n_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.ncols())
    }

    /// Class scores for a per-channel mean-intensity input.
    pub fn forward(&self, mean_input: &Array1<F>) -> Result<Array1<F>> {
        Ok(self.forward_cached(mean_input)?.scores)
    }

    fn forward_cached(&self, mean_input: &Array1<F>) -> Result<ForwardCache<F>> {
        if mean_input.len() != self.n_in() {
            return Err(CoreError::DimensionMismatch {
                context: "counterpart input",
                expected: self.n_in(),
                actual: mean_input.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut rate = mean_input.clone();
        let mut pre_fold = Vec::with_capacity(self.layers.len());
        let mut folded = Vec::with_capacity(self.layers.len());
        let mut scores = Array1::zeros(0);
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.w.dot(&rate);
            let a_folded = match &layer.v {
                Some(v) => &a + &v.dot(&relu(&a)),
                None => a.clone(),
            };
            let linear_output = l == last && self.output_map.is_none();
            rate = if linear_output {
                scores = a_folded.clone();
                a_folded.clone()
            } else {
                relu(&a_folded)
            };
            pre_fold.push(a);
            folded.push(a_folded);
            if l == last {
                if let Some(g) = &self.output_map {
                    scores = g.dot(&rate);
                }
            }
        }
        Ok(ForwardCache {
            pre_fold,
            folded,
            scores,
        })
    }

    /// Gradient of the classification loss with respect to the mean-intensity
    /// input, by a hand-rolled reverse pass through the ReLU stack.
    pub fn input_gradient(
        &self,
        mean_input: &Array1<F>,
        target: usize,
        loss: &LossSpec,
    ) -> Result<Array1<F>> {
        let cache = self.forward_cached(mean_input)?;
        let (_, dldz) = loss_and_grad(&cache.scores, target, loss)?;
        let last = self.layers.len() - 1;

        // delta w.r.t. each layer's post-transfer rate, walked backwards
        let mut d_rate: Array1<F> = match &self.output_map {
            Some(g) => g.t().dot(&dldz),
            None => dldz,
        };
        for l in (0..self.layers.len()).rev() {
            let linear_output = l == last && self.output_map.is_none();
            // through the transfer into the folded pre-activation
            let mut d_folded = d_rate;
            if !linear_output {
                for (d, &a) in d_folded.iter_mut().zip(self.relu_arg(l, &cache).iter()) {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                }
            }
            // through the recurrent fold: a' = a + V relu(a)
            let d_pre = match &self.layers[l].v {
                Some(v) => {
                    let mut extra = v.t().dot(&d_folded);
                    for (e, &a) in extra.iter_mut().zip(cache.pre_fold[l].iter()) {
                        if a <= F::zero() {
                            *e = F::zero();
                        }
                    }
                    &d_folded + &extra
                }
                None => d_folded,
            };
            d_rate = self.layers[l].w.t().dot(&d_pre);
        }
        Ok(d_rate)
    }

    fn relu_arg<'c>(&self, l: usize, cache: &'c ForwardCache<F>) -> &'c Array1<F> {
        &cache.folded[l]
    }
}

struct ForwardCache<F: Scalar> {
    /// W r before the recurrent fold, per layer.
    pre_fold: Vec<Array1<F>>,
    /// Pre-activation after the fold (the ReLU argument), per layer.
    folded: Vec<Array1<F>>,
    scores: Array1<F>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::{init_network, LayerSpec, LifParams, NetworkConfig, ReadoutMode, SurrogateSpec};
    use ndarray::array;

    fn simple_net(seed: u64) -> Network<f64> {
        init_network(
            &NetworkConfig {
                input_size: 3,
                layers: vec![LayerSpec::rec(4), LayerSpec::ff(2)],
                lif: LifParams::new(0.9, 0.5, 0.5),
                surrogate: SurrogateSpec::default(),
                readout_mode: ReadoutMode::MembraneSum,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_input_gives_zero_rates_and_scores() {
        let model = build_ann_counterpart(&simple_net(0));
        let scores = model.forward(&Array1::zeros(3)).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_linear_layer_is_proportional_to_time_averaged_drive() {
        let net = {
            let mut n = init_network(
                &NetworkConfig {
                    input_size: 2,
                    layers: vec![LayerSpec::ff(2)],
                    lif: LifParams::new(0.9f64, 0.5, 0.5),
                    surrogate: SurrogateSpec::default(),
                    readout_mode: ReadoutMode::MembraneSum,
                },
                0,
            )
            .unwrap();
            n.layers[0].w = array![[1.0, -0.5], [0.25, 2.0]];
            n
        };
        let model = build_ann_counterpart(&net);
        let mean = array![0.5, 0.25];
        let scores = model.forward(&mean).unwrap();
        // scores = W x_bar for the linear output stage
        assert!((scores[0] - (0.5 - 0.125)).abs() < 1e-14);
        assert!((scores[1] - (0.125 + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn counterpart_is_a_snapshot() {
        let mut net = simple_net(3);
        let model = build_ann_counterpart(&net);
        let mean = array![0.5, 0.1, 0.9];
        let before = model.forward(&mean).unwrap();
        net.layers[0].w.fill(123.0);
        let after = model.forward(&mean).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = simple_net(7);
        let model = build_ann_counterpart(&net);
        let loss = LossSpec::default();
        let x = array![0.4, 0.7, 0.2];
        let grad = model.input_gradient(&x, 1, &loss).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let lp = loss_value(&model, &xp, 1, &loss);
            let lm = loss_value(&model, &xm, 1, &loss);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad[c] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "channel {c}: analytic {} vs fd {fd}",
                grad[c]
            );
        }
    }

    fn loss_value(model: &RateModel<f64>, x: &Array1<f64>, target: usize, loss: &LossSpec) -> f64 {
        let scores = model.forward(x).unwrap();
        loss_and_grad(&scores, target, loss).unwrap().0
    }
}
