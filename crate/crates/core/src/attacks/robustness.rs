//! Clean-vs-adversarial representational similarity contrast between the
//! feed-forward and recurrent architectures.

use super::fgsm::{fgsm_perturb, FgsmConfig, FgsmMode};
use crate::analysis::{cka_minibatch, layer_representations, RepresentationSource};
use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::snn::Network;
use crate::tensor::SpikeTensor;
use serde::{Deserialize, Serialize};

/// One (epsilon, layer) cell of the robustness contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkaDeltaRow {
    pub epsilon: f64,
    pub layer: usize,
    pub cka_ff: f64,
    pub cka_rec: f64,
    /// REC minus FF similarity; positive means recurrence preserved the
    /// layer's representation better under attack.
    pub delta: f64,
}

/// For each epsilon and layer: CKA between clean and adversarial
/// representations, per architecture, each attacked through its own
/// gradients; returns REC minus FF.
pub fn robustness_cka_delta<F: Scalar>(
    net_ff: &Network<F>,
    net_rec: &Network<F>,
    clean: &Dataset<F>,
    epsilons: &[F],
    mode: FgsmMode,
    batch_size: usize,
) -> Result<Vec<CkaDeltaRow>> {
    if net_ff.n_layers() != net_rec.n_layers() {
        return Err(CoreError::DimensionMismatch {
            context: "architecture layer counts",
            expected: net_ff.n_layers(),
            actual: net_rec.n_layers(),
        });
    }
    let mut rows = Vec::new();
    for &eps in epsilons {
        let ff = clean_vs_adversarial_cka(net_ff, clean, eps, mode, batch_size)?;
        let rec = clean_vs_adversarial_cka(net_rec, clean, eps, mode, batch_size)?;
        for (layer, (&cka_ff, &cka_rec)) in ff.iter().zip(rec.iter()).enumerate() {
            rows.push(CkaDeltaRow {
                epsilon: eps.to_f64_c(),
                layer,
                cka_ff,
                cka_rec,
                delta: cka_rec - cka_ff,
            });
        }
    }
    Ok(rows)
}

/// Per-layer CKA between clean and self-generated adversarial activations.
/// Epsilon zero short-circuits to exact self-similarity.
fn clean_vs_adversarial_cka<F: Scalar>(
    net: &Network<F>,
    clean: &Dataset<F>,
    epsilon: F,
    mode: FgsmMode,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if epsilon == F::zero() {
        // identical inputs, identical representations
        return Ok(vec![1.0; net.n_layers()]);
    }
    let cfg = FgsmConfig::new(epsilon, mode);
    let adversarial: Vec<SpikeTensor<F>> = clean
        .samples()
        .iter()
        .map(|(tensor, label)| fgsm_perturb(net, tensor, *label, &cfg))
        .collect::<Result<_>>()?;

    let mut per_layer = vec![Vec::new(); net.n_layers()];
    let n = clean.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        if end - start < 4 {
            break; // unbiased estimator needs b >= 4; drop the tail batch
        }
        let clean_refs: Vec<&SpikeTensor<F>> = clean.samples()[start..end]
            .iter()
            .map(|(t, _)| t)
            .collect();
        let adv_refs: Vec<&SpikeTensor<F>> = adversarial[start..end].iter().collect();
        let clean_reps = layer_representations(net, &clean_refs, RepresentationSource::Spikes)?;
        let adv_reps = layer_representations(net, &adv_refs, RepresentationSource::Spikes)?;
        for (l, (c, a)) in clean_reps.iter().zip(adv_reps.iter()).enumerate() {
            per_layer[l].push((c.clone(), a.clone()));
        }
        start = end;
    }
    if per_layer[0].is_empty() {
        return Err(CoreError::BatchTooSmall {
            context: "robustness CKA",
            required: 4,
            actual: n,
        });
    }
    per_layer
        .into_iter()
        .map(|pairs| {
            let value = cka_minibatch(pairs.iter().map(|(a, b)| (a, b)))?;
            Ok(value.to_f64_c())
        })
        .collect()
}
