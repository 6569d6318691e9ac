//! Fully local online learning: every layer carries a fixed random readout
//! and trains against its own loss at each timestep, with no error flowing
//! between layers. Downstream layers receive spikes only.

use super::{argmax, check_finite_loss, loss_and_grad, EpochStats, Gradients, LossSpec};
use crate::data::{batches, Dataset};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::snn::{
    lif_step, surrogate_grad, LayerParams, LayerState, Network, ReadoutMode, SurrogateSpec,
};
use crate::tensor::SpikeTensor;
use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fixed random readout `[n_classes x n_neurons]` mapping a layer's spikes
/// to class space. Never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalReadout<F: Scalar> {
    pub g: Array2<F>,
}

/// One readout per trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecolleReadouts<F: Scalar> {
    pub per_layer: Vec<LocalReadout<F>>,
}

impl<F: Scalar> DecolleReadouts<F> {
    /// Readout entries drawn uniform(-k, k), k = 1/sqrt(n_neurons) per layer.
    pub fn new_random(net: &Network<F>, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_layer = net
            .layers
            .iter()
            .map(|l| {
                let k = F::one() / F::from_usize(l.n_out()).unwrap().sqrt();
                let dist = Uniform::new_inclusive(-k, k).expect("valid uniform bounds");
                LocalReadout {
                    g: Array2::from_shape_fn((n_classes, l.n_out()), |_| dist.sample(&mut rng)),
                }
            })
            .collect();
        Self { per_layer }
    }

    pub fn n_classes(&self) -> usize {
        self.per_layer.first().map_or(0, |r| r.g.nrows())
    }
}

/// `y = g s`: the layer's instantaneous class readout.
pub fn local_readout<F: Scalar>(
    spikes: ArrayView1<'_, F>,
    readout: &LocalReadout<F>,
) -> Array1<F> {
    readout.g.dot(&spikes)
}

/// Double-exponential filter of the presynaptic spikes, matching the
/// synaptic and membrane kernels so that `p_j = du_i/dw_ij` under the
/// detached reset. Refractory history is deliberately ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PresynapticTrace<F: Scalar> {
    pub q: Array1<F>,
    pub p: Array1<F>,
}

impl<F: Scalar> PresynapticTrace<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: Array1::zeros(n),
            p: Array1::zeros(n),
        }
    }

    pub fn unit_count(&self) -> usize {
        self.q.len() + self.p.len()
    }
}

/// `q' = alpha_syn q + s_in`, `p' = alpha_mem p + q'`, once per timestep in
/// forward order.
pub fn trace_update<F: Scalar>(
    trace: &mut PresynapticTrace<F>,
    input_spikes: ArrayView1<'_, F>,
    lif: &crate::snn::LifParams<F>,
) {
    trace.q = &trace.q * lif.alpha_syn + &input_spikes;
    trace.p = &trace.p * lif.alpha_mem + &trace.q;
}

/// One timestep's weight update for one layer.
#[derive(Debug, Clone)]
pub struct StepDelta<F: Scalar> {
    pub dw: Array2<F>,
    pub dv: Option<Array2<F>>,
    /// The layer's local loss at this step.
    pub loss: F,
}

/// Local update of Eq. `dw_ij = -eta * err_i * sigma'(u_i) * p_j`, where the
/// neuron error is the local readout loss gradient pulled back through `g`.
#[allow(clippy::too_many_arguments)]
pub fn decolle_step_update<F: Scalar>(
    layer: &LayerParams<F>,
    state: &LayerState<F>,
    trace: &PresynapticTrace<F>,
    rec_trace: Option<&PresynapticTrace<F>>,
    readout: &LocalReadout<F>,
    surrogate: &SurrogateSpec<F>,
    pseudo_target: usize,
    loss: &LossSpec,
    eta: F,
) -> Result<StepDelta<F>> {
    if readout.g.ncols() != layer.n_out() {
        return Err(CoreError::DimensionMismatch {
            context: "decolle readout width",
            expected: layer.n_out(),
            actual: readout.g.ncols(),
        });
    }
    if trace.p.len() != layer.n_in() {
        return Err(CoreError::DimensionMismatch {
            context: "decolle presynaptic trace",
            expected: layer.n_in(),
            actual: trace.p.len(),
        });
    }
    let y = local_readout(state.spikes.view(), readout);
    let (loss_value, dldy) = loss_and_grad(&y, pseudo_target, loss)?;
    let err = readout.g.t().dot(&dldy);

    let mut factors = Array1::<F>::zeros(layer.n_out());
    for ((f, &e), &u) in factors
        .iter_mut()
        .zip(err.iter())
        .zip(state.potential.iter())
    {
        *f = -eta * e * surrogate_grad(u, surrogate, layer.lif.v_th);
    }

    let mut dw = Array2::<F>::zeros((layer.n_out(), layer.n_in()));
    for (mut row, &f) in dw.rows_mut().into_iter().zip(factors.iter()) {
        row.scaled_add(f, &trace.p);
    }
    let dv = match (layer.is_recurrent(), rec_trace) {
        (true, Some(rt)) => {
            let mut dv = Array2::<F>::zeros((layer.n_out(), layer.n_out()));
            for (mut row, &f) in dv.rows_mut().into_iter().zip(factors.iter()) {
                row.scaled_add(f, &rt.p);
            }
            Some(dv)
        }
        (true, None) => {
            return Err(CoreError::InvalidParam(
                "recurrent layer update needs a recurrent trace".into(),
            ))
        }
        _ => None,
    };

    Ok(StepDelta {
        dw,
        dv,
        loss: loss_value,
    })
}

/// When weight deltas are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateCadence {
    /// True online updates at every timestep (weights change mid-sequence).
    PerStep,
    /// Deltas accumulated over the sequence, applied per batch mean.
    PerSequence,
}

fn require_spiking_output<F: Scalar>(net: &Network<F>) -> Result<()> {
    if net.readout_mode != ReadoutMode::SpikeCount {
        return Err(CoreError::InvalidParam(
            "DECOLLE needs a spiking output layer (spike-count readout), \
             classification goes through the last local readout"
                .into(),
        ));
    }
    Ok(())
}

/// Class scores for a DECOLLE-trained network: the last layer's readout
/// summed over time.
pub fn decolle_predict<F: Scalar>(
    net: &Network<F>,
    readouts: &DecolleReadouts<F>,
    input: &SpikeTensor<F>,
) -> Result<Array1<F>> {
    require_spiking_output(net)?;
    let (_, traces) = crate::snn::forward(net, input, true)?;
    let traces = traces.expect("recording forward returns traces");
    let last = net.n_layers() - 1;
    let readout = &readouts.per_layer[last];
    let mut scores = Array1::zeros(readouts.n_classes());
    for state in &traces[last].states {
        scores = scores + local_readout(state.spikes.view(), readout);
    }
    Ok(scores)
}

/// Output of one non-mutating DECOLLE sweep: sequence-summed deltas per
/// layer, total local loss, readout scores and the trace memory held.
#[derive(Debug, Clone)]
pub struct DecolleOutput<F: Scalar> {
    pub deltas: Gradients<F>,
    pub loss: F,
    pub scores: Array1<F>,
    pub state_units: usize,
}

/// Accumulates the per-step deltas of a whole sequence without touching the
/// network (the per-sequence cadence and the Fisher probe use this).
pub fn decolle_sequence_deltas<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    pseudo_target: usize,
    readouts: &DecolleReadouts<F>,
    loss: &LossSpec,
    eta: F,
) -> Result<DecolleOutput<F>> {
    let mut shadow = net.clone();
    run_decolle_pass(&mut shadow, input, pseudo_target, readouts, loss, eta, false)
}

/// One DECOLLE pass over a sample. With `online` set, deltas are applied to
/// the network at every timestep, so later steps run on updated weights.
fn run_decolle_pass<F: Scalar>(
    net: &mut Network<F>,
    input: &SpikeTensor<F>,
    pseudo_target: usize,
    readouts: &DecolleReadouts<F>,
    loss: &LossSpec,
    eta: F,
    online: bool,
) -> Result<DecolleOutput<F>> {
    require_spiking_output(net)?;
    if readouts.per_layer.len() != net.n_layers() {
        return Err(CoreError::DimensionMismatch {
            context: "decolle readouts",
            expected: net.n_layers(),
            actual: readouts.per_layer.len(),
        });
    }
    let last = net.n_layers() - 1;
    let t_steps = input.t_steps();

    let mut states: Vec<LayerState<F>> = net
        .layers
        .iter()
        .map(|l| LayerState::zeros(l.n_out()))
        .collect();
    let mut traces: Vec<PresynapticTrace<F>> = net
        .layers
        .iter()
        .map(|l| PresynapticTrace::zeros(l.n_in()))
        .collect();
    let mut rec_traces: Vec<Option<PresynapticTrace<F>>> = net
        .layers
        .iter()
        .map(|l| l.is_recurrent().then(|| PresynapticTrace::zeros(l.n_out())))
        .collect();

    let mut deltas = Gradients::zeros_like(net);
    let mut loss_sum = F::zero();
    let mut scores = Array1::zeros(readouts.n_classes());
    let surrogate = net.surrogate;

    for t in 0..t_steps {
        let mut layer_input: Array1<F> = input.row(t).to_owned();
        for l in 0..net.n_layers() {
            let prev_own = states[l].spikes.clone();
            let next = lif_step(&states[l], &net.layers[l], layer_input.view(), prev_own.view())?;
            trace_update(&mut traces[l], layer_input.view(), &net.layers[l].lif);
            if let Some(rt) = rec_traces[l].as_mut() {
                // own spikes delayed by one step, matching the recurrent
                // drive in the membrane recursion
                trace_update(rt, prev_own.view(), &net.layers[l].lif);
            }
            let delta = decolle_step_update(
                &net.layers[l],
                &next,
                &traces[l],
                rec_traces[l].as_ref(),
                &readouts.per_layer[l],
                &surrogate,
                pseudo_target,
                loss,
                eta,
            )?;
            loss_sum = loss_sum + delta.loss;
            if l == last {
                scores = scores + local_readout(next.spikes.view(), &readouts.per_layer[last]);
            }
            if online {
                net.layers[l].w = &net.layers[l].w + &delta.dw;
                if let (Some(v), Some(dv)) = (net.layers[l].v.as_mut(), delta.dv.as_ref()) {
                    *v = &*v + dv;
                }
            } else {
                deltas.layers[l].dw = &deltas.layers[l].dw + &delta.dw;
                if let (Some(av), Some(dv)) = (deltas.layers[l].dv.as_mut(), delta.dv.as_ref()) {
                    *av = &*av + dv;
                }
            }
            layer_input = next.spikes.clone();
            states[l] = next;
        }
    }
    check_finite_loss(loss_sum, "decolle pass")?;

    let state_units: usize = traces.iter().map(|t| t.unit_count()).sum::<usize>()
        + rec_traces
            .iter()
            .flatten()
            .map(|t| t.unit_count())
            .sum::<usize>();
    Ok(DecolleOutput {
        deltas,
        loss: loss_sum,
        scores,
        state_units,
    })
}

/// One epoch of DECOLLE training. `eta` is the plain per-step SGD rate; the
/// readouts are never modified.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch_decolle<F: Scalar>(
    net: &mut Network<F>,
    data: &Dataset<F>,
    readouts: &DecolleReadouts<F>,
    loss: &LossSpec,
    eta: F,
    cadence: UpdateCadence,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in batches(data, batch_size, epoch_seed)? {
        match cadence {
            UpdateCadence::PerStep => {
                for (tensor, label) in batch {
                    let out =
                        run_decolle_pass(net, tensor, *label, readouts, loss, eta, true)?;
                    loss_sum += out.loss.to_f64_c();
                    if argmax(&out.scores) == *label {
                        correct += 1;
                    }
                }
            }
            UpdateCadence::PerSequence => {
                let n = batch.len();
                let mut acc = Gradients::zeros_like(net);
                for (tensor, label) in batch {
                    let out =
                        decolle_sequence_deltas(net, tensor, *label, readouts, loss, eta)?;
                    loss_sum += out.loss.to_f64_c();
                    if argmax(&out.scores) == *label {
                        correct += 1;
                    }
                    acc.add_assign(&out.deltas);
                }
                acc.scale(F::one() / F::from_usize(n).unwrap());
                // deltas already carry -eta
                for (layer, g) in net.layers.iter_mut().zip(&acc.layers) {
                    layer.w = &layer.w + &g.dw;
                    if let (Some(v), Some(dv)) = (layer.v.as_mut(), g.dv.as_ref()) {
                        *v = &*v + dv;
                    }
                }
            }
        }
    }
    Ok(EpochStats {
        mean_loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}
