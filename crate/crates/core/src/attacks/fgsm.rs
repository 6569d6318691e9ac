//! Fast-gradient-sign perturbations of spike rasters.
//!
//! Two gradient routes: the ANN-counterpart mode differentiates a rate-based
//! stand-in with respect to the per-channel mean intensity and applies the
//! same signed step at every timestep; the surrogate-direct mode takes the
//! per-timestep input gradient straight from the BPTT sweep. Either way the
//! result is clipped to the valid intensity range, so no entry ever moves by
//! more than epsilon.

use super::counterpart::{build_ann_counterpart, RateModel};
use crate::error::{CoreError, Result};
use crate::learn::bptt::bptt_run;
use crate::learn::LossSpec;
use crate::scalar::Scalar;
use crate::snn::{Network, SpikeMode};
use crate::tensor::SpikeTensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FgsmMode {
    AnnCounterpart,
    SurrogateDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgsmConfig<F: Scalar> {
    pub epsilon: F,
    pub mode: FgsmMode,
    /// Upper intensity bound inputs are clipped to (spike rasters live in
    /// `[0, max_intensity]`).
    pub max_intensity: F,
}

impl<F: Scalar> FgsmConfig<F> {
    pub fn new(epsilon: F, mode: FgsmMode) -> Self {
        Self {
            epsilon,
            mode,
            max_intensity: F::one(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon < F::zero() {
            return Err(CoreError::InvalidParam(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn sign<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Adversarial copy of `input` against the network's own prediction loss.
pub fn fgsm_perturb<F: Scalar>(
    net: &Network<F>,
    input: &SpikeTensor<F>,
    label: usize,
    cfg: &FgsmConfig<F>,
) -> Result<SpikeTensor<F>> {
    cfg.validate()?;
    if cfg.epsilon == F::zero() {
        return Ok(input.clone());
    }
    let loss = LossSpec::default();
    match cfg.mode {
        FgsmMode::AnnCounterpart => {
            let model = build_ann_counterpart(net);
            fgsm_perturb_model(&model, input, label, cfg)
        }
        FgsmMode::SurrogateDirect => {
            let out = bptt_run(net, input, label, &loss, SpikeMode::Hard, true)?;
            let grad = out.input_gradient.expect("input gradient requested");
            if grad.iter().all(|&g| g == F::zero()) {
                return Err(CoreError::DeadGradient(
                    "surrogate input gradient is identically zero",
                ));
            }
            let mut adv = input.clone();
            for t in 0..input.t_steps() {
                for c in 0..input.channels() {
                    let step = cfg.epsilon * sign(grad[(t, c)]);
                    let x = (input.get(t, c) + step)
                        .max(F::zero())
                        .min(cfg.max_intensity);
                    adv.set(t, c, x);
                }
            }
            Ok(adv)
        }
    }
}

/// ANN-counterpart FGSM against an explicit rate model (lets callers attach
/// a readout map or reuse one snapshot across a sweep).
pub fn fgsm_perturb_model<F: Scalar>(
    model: &RateModel<F>,
    input: &SpikeTensor<F>,
    label: usize,
    cfg: &FgsmConfig<F>,
) -> Result<SpikeTensor<F>> {
    cfg.validate()?;
    if cfg.epsilon == F::zero() {
        return Ok(input.clone());
    }
    let loss = LossSpec::default();
    let mean = input.mean_over_time();
    let grad = model.input_gradient(&mean, label, &loss)?;
    if grad.iter().all(|&g| g == F::zero()) {
        return Err(CoreError::DeadGradient(
            "counterpart input gradient is identically zero",
        ));
    }
    let mut adv = input.clone();
    for t in 0..input.t_steps() {
        for c in 0..input.channels() {
            let step = cfg.epsilon * sign(grad[c]);
            let x = (input.get(t, c) + step)
                .max(F::zero())
                .min(cfg.max_intensity);
            adv.set(t, c, x);
        }
    }
    Ok(adv)
}
