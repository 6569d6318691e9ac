//! Network assembly and the time-unrolled forward pass.

use super::lif::{lif_step, LayerParams, LayerState, LifParams};
use super::surrogate::SurrogateSpec;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::SpikeTensor;
use ndarray::{Array1, Array2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How class scores are read off the output layer.
///
/// `MembraneSum` integrates the output membrane over time and keeps the
/// output layer non-spiking (no reset, no recurrent drive); `SpikeCount`
/// lets the output layer fire normally and counts its spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutMode {
    MembraneSum,
    SpikeCount,
}

/// Spike nonlinearity used by the unrolled pass. `Soft` replaces the hard
/// step with logistic(slope * (u - v_th)) everywhere (including the reset),
/// which makes the whole network differentiable; it exists as a testing
/// oracle for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikeMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<F: Scalar> {
    pub layers: Vec<LayerParams<F>>,
    pub readout_mode: ReadoutMode,
    pub surrogate: SurrogateSpec<F>,
}

impl<F: Scalar> Network<F> {
    pub fn n_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in())
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// True when the output layer integrates instead of spiking.
    pub fn output_is_integrator(&self) -> bool {
        self.readout_mode == ReadoutMode::MembraneSum
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::Empty("network layer stack"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if i > 0 && layer.n_in() != self.layers[i - 1].n_out() {
                return Err(CoreError::DimensionMismatch {
                    context: "adjacent layer sizes",
                    expected: self.layers[i - 1].n_out(),
                    actual: layer.n_in(),
                });
            }
        }
        Ok(())
    }
}

/// Declared size and recurrence of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub size: usize,
    pub recurrent: bool,
}

impl LayerSpec {
    pub fn ff(size: usize) -> Self {
        Self {
            size,
            recurrent: false,
        }
    }

    pub fn rec(size: usize) -> Self {
        Self {
            size,
            recurrent: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig<F: Scalar> {
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    pub lif: LifParams<F>,
    pub surrogate: SurrogateSpec<F>,
    pub readout_mode: ReadoutMode,
}

/// Builds a network with weights drawn from uniform(-k, k), k = 1/sqrt(fan_in)
/// per matrix. Deterministic for a given seed.
pub fn init_network<F: Scalar>(config: &NetworkConfig<F>, seed: u64) -> Result<Network<F>> {
    if config.input_size == 0 {
        return Err(CoreError::InvalidParam("zero-sized input".into()));
    }
    if config.layers.is_empty() {
        return Err(CoreError::Empty("network layer list"));
    }
    config.lif.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(config.layers.len());
    let mut n_in = config.input_size;
    for spec in &config.layers {
        if spec.size == 0 {
            return Err(CoreError::InvalidParam("zero-sized layer".into()));
        }
        let w = uniform_matrix(spec.size, n_in, &mut rng);
        let v = if spec.recurrent {
            Some(uniform_matrix(spec.size, spec.size, &mut rng))
        } else {
            None
        };
        layers.push(LayerParams {
            w,
            v,
            lif: config.lif,
        });
        n_in = spec.size;
    }
    let net = Network {
        layers,
        readout_mode: config.readout_mode,
        surrogate: config.surrogate,
    };
    net.validate()?;
    Ok(net)
}

fn uniform_matrix<F: Scalar>(n_out: usize, n_in: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    let k = F::one() / F::from_usize(n_in).unwrap().sqrt();
    let dist = Uniform::new_inclusive(-k, k).expect("valid uniform bounds");
    Array2::from_shape_fn((n_out, n_in), |_| dist.sample(rng))
}

/// Per-timestep record of one layer: the input spikes it received and the
/// state it produced. This is the storage BPTT replays and the analysis
/// suite reads representations from.
#[derive(Debug, Clone)]
pub struct LayerTrace<F: Scalar> {
    pub inputs: Vec<Array1<F>>,
    pub states: Vec<LayerState<F>>,
}

impl<F: Scalar> LayerTrace<F> {
    fn with_capacity(t: usize) -> Self {
        Self {
            inputs: Vec::with_capacity(t),
            states: Vec::with_capacity(t),
        }
    }

    pub fn t_steps(&self) -> usize {
        self.states.len()
    }

    /// Stored scalars: input vector plus current/potential/spikes per step.
    pub fn unit_count(&self) -> usize {
        let per_step_in: usize = self.inputs.iter().map(|v| v.len()).sum();
        let per_step_state: usize = self.states.iter().map(|s| 3 * s.len()).sum();
        per_step_in + per_step_state
    }
}

/// Runs the network over all timesteps of `input` and returns class scores,
/// with per-layer traces when `record` is set.
pub fn forward<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    record: bool,
) -> Result<(Array1<F>, Option<Vec<LayerTrace<F>>>)> {
    forward_with_mode(net, input, record, SpikeMode::Hard)
}

/// Differentiable-mode forward: spike outputs replaced by the logistic soft
/// activation, reset gated by the soft value. Scores follow the same
/// readout rule as [`forward`].
pub fn forward_soft<F: Scalar>(net: &Network<F>, input: &SpikeTensor<F>) -> Result<Array1<F>> {
    forward_with_mode(net, input, false, SpikeMode::Soft).map(|(scores, _)| scores)
}

pub fn forward_with_mode<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    record: bool,
    mode: SpikeMode,
) -> Result<(Array1<F>, Option<Vec<LayerTrace<F>>>)> {
    if input.channels() != net.n_in() {
        return Err(CoreError::DimensionMismatch {
            context: "forward input channels",
            expected: net.n_in(),
            actual: input.channels(),
        });
    }
    let t_steps = input.t_steps();
    let n_layers = net.n_layers();

    let mut states: Vec<LayerState<F>> = net
        .layers
        .iter()
        .map(|l| LayerState::zeros(l.n_out()))
        .collect();
    let mut traces = if record {
        Some(
            (0..n_layers)
                .map(|_| LayerTrace::with_capacity(t_steps))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let mut scores: Array1<F> = Array1::zeros(net.n_out());

    for t in 0..t_steps {
        let mut layer_input: Array1<F> = input.row(t).to_owned();
        for (l, layer) in net.layers.iter().enumerate() {
            let is_output = l == n_layers - 1;
            let prev_own = states[l].spikes.clone();
            let mut next = lif_step(&states[l], layer, layer_input.view(), prev_own.view())?;

            if mode == SpikeMode::Soft {
                // Replace the hard step with the logistic soft spike.
                next.spikes = next
                    .potential
                    .mapv(|u| net.surrogate.soft_activation(u, layer.lif.v_th));
            }
            if is_output && net.output_is_integrator() {
                // Non-spiking output: membrane integrates, never fires or
                // resets (its zero spike vector keeps lif_step's reset off).
                next.spikes.fill(F::zero());
                scores = scores + &next.potential;
            } else if is_output {
                scores = scores + &next.spikes;
            }

            if let Some(tr) = traces.as_mut() {
                tr[l].inputs.push(layer_input.clone());
                tr[l].states.push(next.clone());
            }
            layer_input = next.spikes.clone();
            states[l] = next;
        }
    }

    Ok((scores, traces))
}
