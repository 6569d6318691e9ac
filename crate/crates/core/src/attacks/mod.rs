//! Robustness harness: FGSM-style input perturbations (through a rate-based
//! ANN counterpart or directly through surrogate gradients) and targeted
//! backdoor poisoning with attack-success-rate evaluation.

mod backdoor;
mod counterpart;
mod fgsm;
mod robustness;

pub use backdoor::{
    attack_success_rate, apply_trigger, poison_dataset, PoisonPlan, TriggerSpec,
};
pub use counterpart::{build_ann_counterpart, RateModel};
pub use fgsm::{fgsm_perturb, fgsm_perturb_model, FgsmConfig, FgsmMode};
pub use robustness::{robustness_cka_delta, CkaDeltaRow};
