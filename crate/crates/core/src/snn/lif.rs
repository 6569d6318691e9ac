//! Discrete-time LIF neuron layer.
//!
//! Per step, for a layer receiving spikes `s_in` from below and its own
//! spikes `s_prev` from the previous step:
//!
//! ```text
//! current'   = alpha_syn * current + w s_in + v s_prev        (v optional)
//! potential' = alpha_mem * potential + current' - v_th * s_prev
//! spike'     = 1[potential' > v_th]
//! ```
//!
//! Reset is by threshold subtraction, gated by the previous step's spike,
//! and is treated as a constant (detached) in every gradient computation.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Neuron constants shared by a layer: decay factors `exp(-1/tau)`, firing
/// threshold, and whether subtraction reset is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams<F: Scalar> {
    pub alpha_syn: F,
    pub alpha_mem: F,
    pub v_th: F,
    pub reset_by_subtraction: bool,
}

impl<F: Scalar> LifParams<F> {
    pub fn new(alpha_syn: F, alpha_mem: F, v_th: F) -> Self {
        Self {
            alpha_syn,
            alpha_mem,
            v_th,
            reset_by_subtraction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_decay = |a: F| a > F::zero() && a <= F::one();
        // alpha_syn = 0 (memoryless synapse) is accepted: several oracle
        // cases and the degenerate-decay tests rely on it.
        if !(self.alpha_syn >= F::zero() && self.alpha_syn <= F::one()) {
            return Err(CoreError::InvalidParam(format!(
                "alpha_syn must lie in [0, 1], got {}",
                self.alpha_syn
            )));
        }
        if !(self.alpha_mem >= F::zero() && self.alpha_mem <= F::one()) {
            return Err(CoreError::InvalidParam(format!(
                "alpha_mem must lie in [0, 1], got {}",
                self.alpha_mem
            )));
        }
        if !(self.v_th > F::zero()) {
            return Err(CoreError::InvalidParam(format!(
                "v_th must be positive, got {}",
                self.v_th
            )));
        }
        let _ = ok_decay;
        Ok(())
    }
}

impl<F: Scalar> Default for LifParams<F> {
    fn default() -> Self {
        Self::new(
            F::from_f64_c(0.9),
            F::from_f64_c(0.5),
            F::from_f64_c(0.9),
        )
    }
}

/// Trainable state of one layer: feed-forward weights, optional explicit
/// recurrent weights, and the neuron constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F: Scalar> {
    pub w: Array2<F>,
    pub v: Option<Array2<F>>,
    pub lif: LifParams<F>,
}

impl<F: Scalar> LayerParams<F> {
    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_recurrent(&self) -> bool {
        self.v.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        if self.w.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("feed-forward weights"));
        }
        if let Some(v) = &self.v {
            if v.nrows() != self.n_out() || v.ncols() != self.n_out() {
                return Err(CoreError::DimensionMismatch {
                    context: "recurrent weight matrix",
                    expected: self.n_out(),
                    actual: v.nrows().max(v.ncols()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite("recurrent weights"));
            }
        }
        Ok(())
    }
}

/// Instantaneous layer state: synaptic current, membrane potential and the
/// spike vector emitted this step (0/1 hard, or (0,1) in soft mode).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<F: Scalar> {
    pub current: Array1<F>,
    pub potential: Array1<F>,
    pub spikes: Array1<F>,
}

impl<F: Scalar> LayerState<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            current: Array1::zeros(n),
            potential: Array1::zeros(n),
            spikes: Array1::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }
}

/// Advances one layer by one timestep.
///
/// `prev_own_spikes` drives the explicit recurrent term and is ignored for
/// non-recurrent layers; the subtraction reset is gated by the spikes stored
/// in `state` (the previous step's own firing). Ties at exactly `v_th` do
/// not fire.
pub fn lif_step<F: Scalar>(
    state: &LayerState<F>,
    params: &LayerParams<F>,
    input_spikes: ArrayView1<'_, F>,
    prev_own_spikes: ArrayView1<'_, F>,
) -> Result<LayerState<F>> {
    if input_spikes.len() != params.n_in() {
        return Err(CoreError::DimensionMismatch {
            context: "lif_step input",
            expected: params.n_in(),
            actual: input_spikes.len(),
        });
    }
    if state.len() != params.n_out() {
        return Err(CoreError::DimensionMismatch {
            context: "lif_step state",
            expected: params.n_out(),
            actual: state.len(),
        });
    }
    if input_spikes.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite("lif_step input spikes"));
    }

    let lif = &params.lif;
    let mut current = &state.current * lif.alpha_syn + params.w.dot(&input_spikes);
    if let Some(v) = &params.v {
        if prev_own_spikes.len() != params.n_out() {
            return Err(CoreError::DimensionMismatch {
                context: "lif_step recurrent spikes",
                expected: params.n_out(),
                actual: prev_own_spikes.len(),
            });
        }
        current = current + v.dot(&prev_own_spikes);
    }

    let mut potential = &state.potential * lif.alpha_mem + &current;
    if lif.reset_by_subtraction {
        potential = potential - &state.spikes * lif.v_th;
    }

    let spikes = potential.mapv(|u| if u > lif.v_th { F::one() } else { F::zero() });

    Ok(LayerState {
        current,
        potential,
        spikes,
    })
}
