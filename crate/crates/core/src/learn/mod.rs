//! Learning rules of increasing locality and their shared plumbing:
//! loss functions, gradient containers, optimizers and epoch bookkeeping.

pub mod bptt;
pub mod decolle;
pub mod eprop;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::snn::Network;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Per-layer weight gradients mirroring a [`Network`]'s shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F: Scalar> {
    pub layers: Vec<LayerGrad<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<F: Scalar> {
    pub dw: Array2<F>,
    pub dv: Option<Array2<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| layer_grad_zeros(l.n_out(), l.n_in(), l.is_recurrent()))
            .collect();
        Self { layers }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.dw = &a.dw + &b.dw;
            if let (Some(av), Some(bv)) = (a.dv.as_mut(), b.dv.as_ref()) {
                *av = &*av + bv;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for layer in &mut self.layers {
            layer.dw.mapv_inplace(|x| x * factor);
            if let Some(v) = layer.dv.as_mut() {
                v.mapv_inplace(|x| x * factor);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.dw.iter().all(|x| x.is_finite())
                && l.dv.as_ref().is_none_or(|v| v.iter().all(|x| x.is_finite()))
        })
    }

    /// Largest relative deviation from `other`, with `floor` guarding the
    /// denominator for near-zero coordinates. Used by the gradient oracles.
    pub fn max_relative_diff(&self, other: &Gradients<F>, floor: F) -> F {
        let mut worst = F::zero();
        let mut upd = |a: F, b: F| {
            let denom = a.abs().max(b.abs()).max(floor);
            let rel = (a - b).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        };
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (&x, &y) in a.dw.iter().zip(b.dw.iter()) {
                upd(x, y);
            }
            if let (Some(av), Some(bv)) = (a.dv.as_ref(), b.dv.as_ref()) {
                for (&x, &y) in av.iter().zip(bv.iter()) {
                    upd(x, y);
                }
            }
        }
        worst
    }
}

fn layer_grad_zeros<F: Scalar>(n_out: usize, n_in: usize, recurrent: bool) -> LayerGrad<F> {
    LayerGrad {
        dw: Array2::zeros((n_out, n_in)),
        dv: recurrent.then(|| Array2::zeros((n_out, n_out))),
    }
}

/// Loss over class scores; targets are one-hot class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MeanSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::SoftmaxCrossEntropy,
        }
    }
}

/// Numerically-stable softmax.
pub fn softmax<F: Scalar>(z: &Array1<F>) -> Array1<F> {
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let exps = z.mapv(|x| (x - max).exp());
    let sum: F = exps.iter().copied().sum();
    exps / sum
}

/// Loss value and its gradient with respect to the class scores.
///
/// Mean-squared loss is the plain sum of squared differences against the
/// one-hot target (no 1/K normalization).
pub fn loss_and_grad<F: Scalar>(
    scores: &Array1<F>,
    target: usize,
    loss: &LossSpec,
) -> Result<(F, Array1<F>)> {
    if target >= scores.len() {
        return Err(CoreError::OutOfRange {
            context: "loss target class",
            index: target,
            bound: scores.len(),
        });
    }
    match loss.kind {
        LossKind::SoftmaxCrossEntropy => {
            let p = softmax(scores);
            let eps = F::from_f64_c(1e-30);
            let value = -(p[target].max(eps)).ln();
            let mut grad = p;
            grad[target] = grad[target] - F::one();
            Ok((value, grad))
        }
        LossKind::MeanSquared => {
            let mut grad = scores.clone();
            let mut value = F::zero();
            for (k, g) in grad.iter_mut().enumerate() {
                let y = if k == target { F::one() } else { F::zero() };
                let d = *g - y;
                value = value + d * d;
                *g = F::from_f64_c(2.0) * d;
            }
            Ok((value, grad))
        }
    }
}

pub fn argmax<F: Scalar>(scores: &Array1<F>) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// First-order optimizers; plain SGD is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerSpec {
    Sgd { lr: f64 },
    Momentum { lr: f64, beta: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr }
            | OptimizerSpec::Momentum { lr, .. }
            | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer state bound to one network's shapes.
#[derive(Debug, Clone)]
pub struct Optimizer<F: Scalar> {
    pub spec: OptimizerSpec,
    steps: u64,
    m: Option<Gradients<F>>,
    v: Option<Gradients<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self {
            spec,
            steps: 0,
            m: None,
            v: None,
        }
    }

    /// Applies `delta_w = -lr * g` (with momentum / Adam preconditioning when
    /// configured) in place.
    pub fn apply(&mut self, net: &mut Network<F>, grads: &Gradients<F>) {
        self.steps += 1;
        match self.spec {
            OptimizerSpec::Sgd { lr } => {
                let lr = F::from_f64_c(lr);
                for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
                    layer.w = &layer.w - &(g.dw.mapv(|x| x * lr));
                    if let (Some(v), Some(dv)) = (layer.v.as_mut(), g.dv.as_ref()) {
                        *v = &*v - &(dv.mapv(|x| x * lr));
                    }
                }
            }
            OptimizerSpec::Momentum { lr, beta } => {
                let (lr, beta) = (F::from_f64_c(lr), F::from_f64_c(beta));
                let m = self.m.get_or_insert_with(|| Gradients::zeros_like(net));
                for ((layer, g), mg) in net.layers.iter_mut().zip(&grads.layers).zip(&mut m.layers)
                {
                    mg.dw = &(mg.dw.mapv(|x| x * beta)) + &g.dw;
                    layer.w = &layer.w - &(mg.dw.mapv(|x| x * lr));
                    if let (Some(v), Some(dv), Some(mv)) =
                        (layer.v.as_mut(), g.dv.as_ref(), mg.dv.as_mut())
                    {
                        *mv = &(mv.mapv(|x| x * beta)) + dv;
                        *v = &*v - &(mv.mapv(|x| x * lr));
                    }
                }
            }
            OptimizerSpec::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let (lr, b1, b2, eps) = (
                    F::from_f64_c(lr),
                    F::from_f64_c(beta1),
                    F::from_f64_c(beta2),
                    F::from_f64_c(eps),
                );
                let t = F::from_u64(self.steps).unwrap();
                let bc1 = F::one() - b1.powf(t);
                let bc2 = F::one() - b2.powf(t);
                if self.m.is_none() {
                    self.m = Some(Gradients::zeros_like(net));
                    self.v = Some(Gradients::zeros_like(net));
                }
                let m = self.m.as_mut().unwrap();
                let v = self.v.as_mut().unwrap();
                for (((layer, g), mg), vg) in net
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    adam_update(&mut layer.w, &g.dw, &mut mg.dw, &mut vg.dw, lr, b1, b2, eps, bc1, bc2);
                    if let (Some(w_v), Some(dv), Some(mv), Some(vv)) = (
                        layer.v.as_mut(),
                        g.dv.as_ref(),
                        mg.dv.as_mut(),
                        vg.dv.as_mut(),
                    ) {
                        adam_update(w_v, dv, mv, vv, lr, b1, b2, eps, bc1, bc2);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update<F: Scalar>(
    w: &mut Array2<F>,
    g: &Array2<F>,
    m: &mut Array2<F>,
    v: &mut Array2<F>,
    lr: F,
    b1: F,
    b2: F,
    eps: F,
    bc1: F,
    bc2: F,
) {
    ndarray::Zip::from(w)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|w, &g, m, v| {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        });
}

/// Mean loss and training accuracy over one pass of the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

pub(crate) fn check_finite_loss<F: Scalar>(loss: F, context: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Diverged(format!(
            "loss is not finite during {context}"
        )))
    }
}
