//! Backpropagation through time over the unrolled LIF recursion.
//!
//! The reverse sweep walks t = T..1 through recorded traces, propagating
//! adjoints through the membrane and synaptic decay recursions, the spike
//! nonlinearity (surrogate derivative in hard mode, exact logistic
//! derivative in soft mode), inter-layer weights and recurrent weights
//! across adjacent steps. The subtraction reset is detached and contributes
//! no gradient.

use super::{
    argmax, check_finite_loss, loss_and_grad, EpochStats, Gradients, LossSpec, Optimizer,
};
use crate::data::{batches, Dataset};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::snn::{
    forward_with_mode, surrogate_grad, LayerTrace, Network, ReadoutMode, SpikeMode,
};
use crate::tensor::SpikeTensor;
use ndarray::{Array1, Array2};

/// Everything a single reverse sweep produces.
#[derive(Debug, Clone)]
pub struct BpttOutput<F: Scalar> {
    pub gradients: Gradients<F>,
    pub loss: F,
    pub scores: Array1<F>,
    /// d loss / d input, `[T x channels]`; filled when requested.
    pub input_gradient: Option<Array2<F>>,
    /// Scalars held in the stored traces at the peak of the sweep.
    pub trace_units: usize,
}

/// Gradients of the loss with respect to all weights, hard-spike mode.
pub fn bptt_gradients<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    target: usize,
    loss: &LossSpec,
) -> Result<(Gradients<F>, F)> {
    let out = bptt_run(net, input, target, loss, SpikeMode::Hard, false)?;
    Ok((out.gradients, out.loss))
}

/// As [`bptt_gradients`] with an explicit spike mode; soft mode is the
/// finite-difference oracle's differentiable path.
pub fn bptt_gradients_mode<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    target: usize,
    loss: &LossSpec,
    mode: SpikeMode,
) -> Result<(Gradients<F>, F)> {
    let out = bptt_run(net, input, target, loss, mode, false)?;
    Ok((out.gradients, out.loss))
}

/// Full reverse sweep with optional input gradient (used by the
/// surrogate-direct FGSM mode and the probes).
pub fn bptt_run<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    target: usize,
    loss: &LossSpec,
    mode: SpikeMode,
    want_input_gradient: bool,
) -> Result<BpttOutput<F>> {
    let (scores, traces) = forward_with_mode(net, input, true, mode)?;
    let traces: Vec<LayerTrace<F>> = traces.expect("recording forward returns traces");
    let trace_units: usize = traces.iter().map(|t| t.unit_count()).sum();
    let (loss_value, dldz) = loss_and_grad(&scores, target, loss)?;
    check_finite_loss(loss_value, "bptt gradient computation")?;

    let t_steps = input.t_steps();
    let n_layers = net.n_layers();
    let last = n_layers - 1;
    let mut grads = Gradients::zeros_like(net);
    let mut input_gradient =
        want_input_gradient.then(|| Array2::<F>::zeros((t_steps, input.channels())));

    // Adjoint buffers, one per layer. During the descending layer loop at
    // time t, `di[l]` still holds d loss / d current at (l, t+1) until layer
    // l overwrites it, while `di[l+1]` already holds the value at (l+1, t).
    // The same discipline applies to `du`.
    let mut du: Vec<Array1<F>> = net.layers.iter().map(|l| Array1::zeros(l.n_out())).collect();
    let mut di: Vec<Array1<F>> = du.clone();

    for t in (0..t_steps).rev() {
        for l in (0..n_layers).rev() {
            let layer = &net.layers[l];
            let state = &traces[l].states[t];
            let lif = &layer.lif;
            let output_integrates = l == last && net.output_is_integrator();

            // d loss / d spikes at (l, t)
            let mut ds: Array1<F> = Array1::zeros(layer.n_out());
            if l == last {
                if net.readout_mode == ReadoutMode::SpikeCount {
                    ds = ds + &dldz;
                }
            } else {
                ds = ds + net.layers[l + 1].w.t().dot(&di[l + 1]);
            }
            if let Some(v) = &layer.v {
                ds = ds + v.t().dot(&di[l]);
            }
            // In hard mode the subtraction reset is detached. The soft mode
            // is an exact-autodiff oracle, so the smooth reset path
            // (u_{t+1} depends on s_t with coefficient -v_th) is kept.
            if mode == SpikeMode::Soft && lif.reset_by_subtraction && !output_integrates {
                ds = ds - &(&du[l] * lif.v_th);
            }

            // Through the spike nonlinearity into the membrane. A membrane-sum
            // output layer never spikes, so its ds path is dead by
            // construction and only the direct score term remains.
            let mut du_t: Array1<F> = if output_integrates {
                Array1::zeros(layer.n_out())
            } else {
                let mut v = ds;
                for (x, &u) in v.iter_mut().zip(state.potential.iter()) {
                    let sigma = match mode {
                        SpikeMode::Hard => surrogate_grad(u, &net.surrogate, lif.v_th),
                        SpikeMode::Soft => net.surrogate.soft_derivative(u, lif.v_th),
                    };
                    *x = *x * sigma;
                }
                v
            };
            du_t = du_t + &du[l] * lif.alpha_mem;
            if output_integrates {
                du_t = du_t + &dldz;
            }

            let di_t = &du_t + &(&di[l] * lif.alpha_syn);

            // Weight gradients: outer products against the stored inputs and
            // the one-step-delayed own spikes.
            let grad = &mut grads.layers[l];
            let input_t = &traces[l].inputs[t];
            for (mut row, &d) in grad.dw.rows_mut().into_iter().zip(di_t.iter()) {
                row.scaled_add(d, input_t);
            }
            if let (Some(dv), true) = (grad.dv.as_mut(), t > 0) {
                let prev_spikes = &traces[l].states[t - 1].spikes;
                for (mut row, &d) in dv.rows_mut().into_iter().zip(di_t.iter()) {
                    row.scaled_add(d, prev_spikes);
                }
            }
            if l == 0 {
                if let Some(ig) = input_gradient.as_mut() {
                    let g = layer.w.t().dot(&di_t);
                    ig.row_mut(t).assign(&g);
                }
            }

            du[l] = du_t;
            di[l] = di_t;
        }
    }

    Ok(BpttOutput {
        gradients: grads,
        loss: loss_value,
        scores,
        input_gradient,
        trace_units,
    })
}

/// One epoch of minibatch gradient descent with full-unroll BPTT.
///
/// Accuracy is measured on the fly from each sample's forward pass before
/// its batch's update is applied.
pub fn train_epoch_bptt<F: Scalar>(
    net: &mut Network<F>,
    data: &Dataset<F>,
    loss: &LossSpec,
    optimizer: &mut Optimizer<F>,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in batches(data, batch_size, epoch_seed)? {
        let mut acc = Gradients::zeros_like(net);
        let n = batch.len();
        for (tensor, label) in batch {
            let out = bptt_run(net, tensor, *label, loss, SpikeMode::Hard, false)?;
            loss_sum += out.loss.to_f64_c();
            if argmax(&out.scores) == *label {
                correct += 1;
            }
            acc.add_assign(&out.gradients);
        }
        acc.scale(F::one() / F::from_usize(n).unwrap());
        optimizer.apply(net, &acc);
    }
    Ok(EpochStats {
        mean_loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::OptimizerSpec;
    use crate::snn::{init_network, LayerSpec, LifParams, NetworkConfig, SurrogateSpec};

    fn net_cfg(input: usize, layers: Vec<LayerSpec>, readout: ReadoutMode) -> NetworkConfig<f64> {
        NetworkConfig {
            input_size: input,
            layers,
            lif: LifParams::new(0.9, 0.5, 0.6),
            surrogate: SurrogateSpec::default(),
            readout_mode: readout,
        }
    }

    fn random_input(t: usize, ch: usize, seed: u64) -> SpikeTensor<f64> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tensor = SpikeTensor::zeros(t, ch);
        for ti in 0..t {
            for c in 0..ch {
                if rng.random_bool(0.4) {
                    tensor.set(ti, c, 1.0);
                }
            }
        }
        tensor
    }

    #[test]
    fn zero_weights_give_zero_hidden_gradient() {
        let cfg = net_cfg(
            3,
            vec![LayerSpec::ff(4), LayerSpec::ff(2)],
            ReadoutMode::MembraneSum,
        );
        let mut net = init_network(&cfg, 0).unwrap();
        for layer in &mut net.layers {
            layer.w.fill(0.0);
        }
        let input = random_input(5, 3, 1);
        let (grads, _) = bptt_gradients(&net, &input, 0, &LossSpec::default()).unwrap();
        // No spikes anywhere: the hidden layer never drove the output, and
        // the output layer's input trace is all zero.
        assert!(grads.layers[1].dw.iter().all(|&g| g == 0.0));
        // The hidden layer still sees a surrogate-weighted error signal of
        // exactly zero because the chain passes through zero output weights.
        assert!(grads.layers[0].dw.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_layer_zero_weight_gradient_matches_hand_chain() {
        // One integrating output layer, T=1: score = w . input, so the
        // gradient is (softmax - onehot) outer input.
        let cfg = net_cfg(2, vec![LayerSpec::ff(2)], ReadoutMode::MembraneSum);
        let mut net = init_network(&cfg, 0).unwrap();
        for layer in &mut net.layers {
            layer.w.fill(0.0);
        }
        let mut input = SpikeTensor::zeros(1, 2);
        input.set(0, 0, 1.0);
        let (grads, _) = bptt_gradients(&net, &input, 0, &LossSpec::default()).unwrap();
        // softmax of zero scores is uniform: grad row for class 0 = -0.5,
        // class 1 = +0.5 against channel 0 only.
        assert!((grads.layers[0].dw[(0, 0)] + 0.5).abs() < 1e-12);
        assert!((grads.layers[0].dw[(1, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(grads.layers[0].dw[(0, 1)], 0.0);
    }

    #[test]
    fn duplicated_batch_mean_equals_single_gradient() {
        let cfg = net_cfg(
            4,
            vec![LayerSpec::rec(5), LayerSpec::ff(3)],
            ReadoutMode::MembraneSum,
        );
        let net = init_network(&cfg, 3).unwrap();
        let input = random_input(6, 4, 9);
        let (g1, _) = bptt_gradients(&net, &input, 1, &LossSpec::default()).unwrap();
        // mean of two identical per-sample gradients
        let mut g2 = g1.clone();
        g2.add_assign(&g1);
        g2.scale(0.5);
        assert!(g1.max_relative_diff(&g2, 1e-12) < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_and_accuracy_unchanged() {
        use crate::data::SynthSpec;
        let spec = SynthSpec {
            classes: 2,
            n_per_class: 5,
            t_steps: 6,
            channels: 8,
            jitter: 0.1,
            density: 0.3,
            seed: 5,
        };
        let data = crate::data::synth_pattern_dataset::<f64>(&spec).unwrap();
        let cfg = net_cfg(8, vec![LayerSpec::ff(6), LayerSpec::ff(2)], ReadoutMode::MembraneSum);
        let mut net = init_network(&cfg, 1).unwrap();
        let before = net.clone();
        let mut opt = Optimizer::new(OptimizerSpec::sgd(0.0));
        let stats =
            train_epoch_bptt(&mut net, &data, &LossSpec::default(), &mut opt, 4, 0).unwrap();
        assert_eq!(net, before);
        // accuracy equals the untrained network's accuracy
        let mut correct = 0;
        for (tensor, label) in data.samples() {
            let (scores, _) = crate::snn::forward(&net, tensor, false).unwrap();
            if argmax(&scores) == *label {
                correct += 1;
            }
        }
        assert!((stats.accuracy - correct as f64 / data.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_training_trajectory() {
        use crate::data::SynthSpec;
        let spec = SynthSpec {
            classes: 2,
            n_per_class: 4,
            t_steps: 5,
            channels: 6,
            jitter: 0.05,
            density: 0.3,
            seed: 2,
        };
        let data = crate::data::synth_pattern_dataset::<f64>(&spec).unwrap();
        let cfg = net_cfg(6, vec![LayerSpec::rec(5), LayerSpec::ff(2)], ReadoutMode::MembraneSum);
        let mut run = |seed| {
            let mut net = init_network(&cfg, 17).unwrap();
            let mut opt = Optimizer::new(OptimizerSpec::sgd(0.05));
            for epoch in 0..3u64 {
                train_epoch_bptt(&mut net, &data, &LossSpec::default(), &mut opt, 4, seed + epoch)
                    .unwrap();
            }
            net
        };
        assert_eq!(run(100), run(100));
    }
}
