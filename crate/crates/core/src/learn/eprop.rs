//! Eligibility propagation: per-synapse forward-filtered traces combined
//! with output errors routed to hidden layers through fixed feedback
//! matrices. One forward sweep, no stored per-step history — the learning
//! state is the eligibility tensors themselves.

use super::{
    argmax, check_finite_loss, loss_and_grad, EpochStats, Gradients, LossSpec, Optimizer,
};
use crate::data::{batches, Dataset};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::snn::{lif_step, surrogate_grad, LayerParams, LayerState, Network};
use crate::tensor::SpikeTensor;
use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-layer eligibility bookkeeping: the synaptically-filtered presynaptic
/// activity, the membrane-filtered eligibility vector (one row per
/// postsynaptic neuron), their recurrent analogues, and the accumulated
/// gradient estimate.
#[derive(Debug, Clone)]
pub struct EligibilityState<F: Scalar> {
    pub filtered_input: Array1<F>,
    pub elig: Array2<F>,
    pub filtered_input_rec: Option<Array1<F>>,
    pub elig_rec: Option<Array2<F>>,
    pub accum_w: Array2<F>,
    pub accum_v: Option<Array2<F>>,
}

impl<F: Scalar> EligibilityState<F> {
    pub fn for_layer(layer: &LayerParams<F>) -> Self {
        let (n_out, n_in) = (layer.n_out(), layer.n_in());
        let rec = layer.is_recurrent();
        Self {
            filtered_input: Array1::zeros(n_in),
            elig: Array2::zeros((n_out, n_in)),
            filtered_input_rec: rec.then(|| Array1::zeros(n_out)),
            elig_rec: rec.then(|| Array2::zeros((n_out, n_out))),
            accum_w: Array2::zeros((n_out, n_in)),
            accum_v: rec.then(|| Array2::zeros((n_out, n_out))),
        }
    }

    /// Scalars held by this state (the learning-state memory the scaling
    /// probe counts).
    pub fn unit_count(&self) -> usize {
        self.filtered_input.len()
            + self.elig.len()
            + self.filtered_input_rec.as_ref().map_or(0, |v| v.len())
            + self.elig_rec.as_ref().map_or(0, |m| m.len())
            + self.accum_w.len()
            + self.accum_v.as_ref().map_or(0, |m| m.len())
    }
}

/// Advances the eligibility recursions by one step, in forward order:
/// the filtered input picks up this step's presynaptic spikes, then the
/// eligibility vector integrates it under the membrane decay. The recurrent
/// analogue is driven by the layer's own spikes delayed by one step.
pub fn eligibility_update<F: Scalar>(
    state: &mut EligibilityState<F>,
    input_spikes: ArrayView1<'_, F>,
    own_prev_spikes: ArrayView1<'_, F>,
    params: &LayerParams<F>,
) -> Result<()> {
    if input_spikes.len() != params.n_in() {
        return Err(CoreError::DimensionMismatch {
            context: "eligibility input",
            expected: params.n_in(),
            actual: input_spikes.len(),
        });
    }
    let lif = &params.lif;
    state.filtered_input = &state.filtered_input * lif.alpha_syn + &input_spikes;
    state.elig.mapv_inplace(|x| x * lif.alpha_mem);
    for mut row in state.elig.rows_mut() {
        row += &state.filtered_input;
    }
    if params.is_recurrent() {
        if own_prev_spikes.len() != params.n_out() {
            return Err(CoreError::DimensionMismatch {
                context: "eligibility recurrent spikes",
                expected: params.n_out(),
                actual: own_prev_spikes.len(),
            });
        }
        let fr = state.filtered_input_rec.as_mut().expect("recurrent state");
        *fr = &*fr * lif.alpha_syn + &own_prev_spikes;
        let er = state.elig_rec.as_mut().expect("recurrent state");
        er.mapv_inplace(|x| x * lif.alpha_mem);
        for mut row in er.rows_mut() {
            row += &*fr;
        }
    }
    Ok(())
}

/// How feedback matrices route output error to hidden neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// Drawn once at init, never updated.
    RandomFixed,
    /// Transposed product of the downstream forward weights, recomputed at
    /// gradient time.
    Symmetric,
}

/// One `[n_neurons x n_classes]` matrix per hidden layer; the output layer
/// receives the exact error and has no feedback matrix.
#[derive(Debug, Clone)]
pub struct FeedbackMatrices<F: Scalar> {
    pub matrices: Vec<Array2<F>>,
    pub mode: FeedbackMode,
}

impl<F: Scalar> FeedbackMatrices<F> {
    /// Fixed random feedback, entries uniform in (-1/sqrt(n_classes),
    /// +1/sqrt(n_classes)).
    pub fn random_fixed(net: &Network<F>, seed: u64) -> Self {
        let n_classes = net.n_out();
        let k = F::one() / F::from_usize(n_classes).unwrap().sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("valid uniform bounds");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrices = net.layers[..net.n_layers() - 1]
            .iter()
            .map(|l| Array2::from_shape_fn((l.n_out(), n_classes), |_| dist.sample(&mut rng)))
            .collect();
        Self {
            matrices,
            mode: FeedbackMode::RandomFixed,
        }
    }

    /// Symmetric feedback derived from the current downstream weights.
    pub fn symmetric(net: &Network<F>) -> Self {
        let last = net.n_layers() - 1;
        let mut matrices = vec![Array2::zeros((0, 0)); last];
        let mut acc = net.layers[last].w.clone(); // [n_classes x n_{last-1}]
        for l in (0..last).rev() {
            matrices[l] = acc.t().to_owned();
            if l > 0 {
                acc = acc.dot(&net.layers[l].w);
            }
        }
        Self {
            matrices,
            mode: FeedbackMode::Symmetric,
        }
    }

    fn refreshed(&self, net: &Network<F>) -> Self {
        match self.mode {
            FeedbackMode::RandomFixed => self.clone(),
            FeedbackMode::Symmetric => Self::symmetric(net),
        }
    }
}

/// Routes the output error to one hidden layer's neurons: `L_i = sum_k g_ik
/// err_k`.
pub fn learning_signal<F: Scalar>(
    output_error: &Array1<F>,
    fb: &FeedbackMatrices<F>,
    layer: usize,
) -> Array1<F> {
    fb.matrices[layer].dot(output_error)
}

/// When the per-step learning signal is recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// Error of the running readout at every timestep (default).
    PerStep,
    /// Single error from the final readout, applied uniformly. In this mode
    /// the rule is exactly BPTT on single-layer non-recurrent networks.
    EndOfSequence,
}

#[derive(Debug, Clone)]
pub struct EpropOutput<F: Scalar> {
    pub gradients: Gradients<F>,
    pub loss: F,
    pub scores: Array1<F>,
    /// Learning-state scalars held at the end of the sweep.
    pub state_units: usize,
}

/// e-prop gradients with per-step learning signals.
pub fn eprop_gradients<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    target: usize,
    fb: &FeedbackMatrices<F>,
    loss: &LossSpec,
) -> Result<(Gradients<F>, F)> {
    let out = eprop_run(net, input, target, fb, loss, ErrorMode::PerStep)?;
    Ok((out.gradients, out.loss))
}

/// Full e-prop sweep. Accumulates `L_i^t * e_ij^t` over a single forward
/// pass; the output layer uses its exact error, hidden layers the
/// feedback-routed signal.
pub fn eprop_run<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    target: usize,
    fb: &FeedbackMatrices<F>,
    loss: &LossSpec,
    error_mode: ErrorMode,
) -> Result<EpropOutput<F>> {
    if input.channels() != net.n_in() {
        return Err(CoreError::DimensionMismatch {
            context: "eprop input channels",
            expected: net.n_in(),
            actual: input.channels(),
        });
    }
    let fb = fb.refreshed(net);
    if fb.matrices.len() != net.n_layers() - 1 {
        return Err(CoreError::DimensionMismatch {
            context: "feedback matrices",
            expected: net.n_layers() - 1,
            actual: fb.matrices.len(),
        });
    }
    let last = net.n_layers() - 1;
    let t_steps = input.t_steps();

    let mut states: Vec<LayerState<F>> = net
        .layers
        .iter()
        .map(|l| LayerState::zeros(l.n_out()))
        .collect();
    let mut elig: Vec<EligibilityState<F>> = net
        .layers
        .iter()
        .map(EligibilityState::for_layer)
        .collect();
    let mut running_scores: Array1<F> = Array1::zeros(net.n_out());

    for t in 0..t_steps {
        let mut layer_input: Array1<F> = input.row(t).to_owned();
        for (l, layer) in net.layers.iter().enumerate() {
            let prev_own = states[l].spikes.clone();
            let mut next = lif_step(&states[l], layer, layer_input.view(), prev_own.view())?;
            if l == last && net.output_is_integrator() {
                next.spikes.fill(F::zero());
                running_scores = running_scores + &next.potential;
            } else if l == last {
                running_scores = running_scores + &next.spikes;
            }
            eligibility_update(&mut elig[l], layer_input.view(), prev_own.view(), layer)?;
            layer_input = next.spikes.clone();
            states[l] = next;
        }

        match error_mode {
            ErrorMode::PerStep => {
                let (_, err) = loss_and_grad(&running_scores, target, loss)?;
                for l in 0..net.n_layers() {
                    let signal = if l == last {
                        err.clone()
                    } else {
                        learning_signal(&err, &fb, l)
                    };
                    accumulate(&mut elig[l], &states[l], net, l, &signal);
                }
            }
            ErrorMode::EndOfSequence => {
                // Accumulate the plain eligibility sums now; the single final
                // signal scales each row after the sweep.
                let ones: Array1<F> = Array1::ones(net.layers[0].n_out());
                for l in 0..net.n_layers() {
                    let ones_l: Array1<F> = if net.layers[l].n_out() == ones.len() {
                        ones.clone()
                    } else {
                        Array1::ones(net.layers[l].n_out())
                    };
                    accumulate(&mut elig[l], &states[l], net, l, &ones_l);
                }
            }
        }
    }

    let (loss_value, final_err) = loss_and_grad(&running_scores, target, loss)?;
    check_finite_loss(loss_value, "eprop gradient computation")?;

    if error_mode == ErrorMode::EndOfSequence {
        for l in 0..net.n_layers() {
            let signal = if l == last {
                final_err.clone()
            } else {
                learning_signal(&final_err, &fb, l)
            };
            for (mut row, &s) in elig[l].accum_w.rows_mut().into_iter().zip(signal.iter()) {
                row.mapv_inplace(|x| x * s);
            }
            if let Some(av) = elig[l].accum_v.as_mut() {
                for (mut row, &s) in av.rows_mut().into_iter().zip(signal.iter()) {
                    row.mapv_inplace(|x| x * s);
                }
            }
        }
    }

    let state_units: usize = elig.iter().map(|e| e.unit_count()).sum();
    let layers = elig
        .into_iter()
        .map(|e| super::LayerGrad {
            dw: e.accum_w,
            dv: e.accum_v,
        })
        .collect();
    Ok(EpropOutput {
        gradients: Gradients { layers },
        loss: loss_value,
        scores: running_scores,
        state_units,
    })
}

/// accum_w[i, j] += signal_i * sigma'(u_i) * elig[i, j]; the sigma factor is
/// dropped for the non-spiking integrator output whose activation is the
/// membrane itself.
fn accumulate<F: Scalar>(
    elig: &mut EligibilityState<F>,
    state: &LayerState<F>,
    net: &Network<F>,
    layer_idx: usize,
    signal: &Array1<F>,
) {
    let layer = &net.layers[layer_idx];
    let integrator_output = layer_idx == net.n_layers() - 1 && net.output_is_integrator();
    let factors: Vec<F> = state
        .potential
        .iter()
        .zip(signal.iter())
        .map(|(&u, &s)| {
            if integrator_output {
                s
            } else {
                s * surrogate_grad(u, &net.surrogate, layer.lif.v_th)
            }
        })
        .collect();
    for ((mut acc_row, el_row), &f) in elig
        .accum_w
        .rows_mut()
        .into_iter()
        .zip(elig.elig.rows())
        .zip(factors.iter())
    {
        acc_row.scaled_add(f, &el_row);
    }
    if let (Some(acc_v), Some(el_v)) = (elig.accum_v.as_mut(), elig.elig_rec.as_ref()) {
        for ((mut acc_row, el_row), &f) in acc_v
            .rows_mut()
            .into_iter()
            .zip(el_v.rows())
            .zip(factors.iter())
        {
            acc_row.scaled_add(f, &el_row);
        }
    }
}

/// One epoch of minibatch training with e-prop gradients.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch_eprop<F: Scalar>(
    net: &mut Network<F>,
    data: &Dataset<F>,
    fb: &FeedbackMatrices<F>,
    loss: &LossSpec,
    optimizer: &mut Optimizer<F>,
    batch_size: usize,
    epoch_seed: u64,
    error_mode: ErrorMode,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in batches(data, batch_size, epoch_seed)? {
        let mut acc = Gradients::zeros_like(net);
        let n = batch.len();
        for (tensor, label) in batch {
            let out = eprop_run(net, tensor, *label, fb, loss, error_mode)?;
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
