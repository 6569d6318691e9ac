//! Surrogate derivatives for the spike step function, plus the soft
//! (logistic) activation used by the differentiable testing mode.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    /// 1 / (1 + slope * |u - v_th|)^2, peak 1 at threshold.
    FastSigmoid,
    /// Unit-mass box of width 1/slope centered on the threshold.
    Rectangular,
    /// Exact derivative of logistic(slope * (u - v_th)).
    SigmoidSoft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec<F: Scalar> {
    pub kind: SurrogateKind,
    pub slope: F,
}

impl<F: Scalar> SurrogateSpec<F> {
    pub fn new(kind: SurrogateKind, slope: F) -> Self {
        Self { kind, slope }
    }

    /// Soft spike value logistic(slope * (u - v_th)), shared by the
    /// differentiable forward mode regardless of `kind`.
    pub fn soft_activation(&self, u: F, v_th: F) -> F {
        logistic(self.slope * (u - v_th))
    }

    /// Exact derivative of [`soft_activation`](Self::soft_activation) with
    /// respect to `u`.
    pub fn soft_derivative(&self, u: F, v_th: F) -> F {
        let p = self.soft_activation(u, v_th);
        self.slope * p * (F::one() - p)
    }
}

impl<F: Scalar> Default for SurrogateSpec<F> {
    fn default() -> Self {
        // Fast sigmoid with slope 10; the choice of surrogate is reported to
        // have negligible accuracy impact, this one is cheap and smooth.
        Self::new(SurrogateKind::FastSigmoid, F::from_f64_c(10.0))
    }
}

fn logistic<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Surrogate derivative of the spike nonlinearity at membrane potential `u`.
/// Total function: finite for every finite input.
pub fn surrogate_grad<F: Scalar>(u: F, spec: &SurrogateSpec<F>, v_th: F) -> F {
    let d = u - v_th;
    match spec.kind {
        SurrogateKind::FastSigmoid => {
            let denom = F::one() + spec.slope * d.abs();
            F::one() / (denom * denom)
        }
        SurrogateKind::Rectangular => {
            let half_width = F::one() / (F::from_f64_c(2.0) * spec.slope);
            if d.abs() < half_width {
                spec.slope
            } else {
                F::zero()
            }
        }
        SurrogateKind::SigmoidSoft => spec.soft_derivative(u, v_th),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_sigmoid_peaks_at_one_on_threshold() {
        for slope in [0.5, 1.0, 10.0, 100.0] {
            let spec = SurrogateSpec::new(SurrogateKind::FastSigmoid, slope);
            assert_eq!(surrogate_grad(1.0, &spec, 1.0), 1.0);
        }
    }

    #[test]
    fn fast_sigmoid_vanishes_far_from_threshold() {
        let spec = SurrogateSpec::new(SurrogateKind::FastSigmoid, 10.0);
        assert!(surrogate_grad(1e9, &spec, 1.0) < 1e-12);
        assert!(surrogate_grad(-1e9, &spec, 1.0) < 1e-12);
    }

    #[test]
    fn sigmoid_soft_quarter_slope_at_threshold() {
        let spec = SurrogateSpec::new(SurrogateKind::SigmoidSoft, 1.0f64);
        assert!((surrogate_grad(0.0, &spec, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rectangular_is_unit_mass_box() {
        let spec = SurrogateSpec::new(SurrogateKind::Rectangular, 4.0);
        // width 1/4 around the threshold, height 4
        assert_eq!(surrogate_grad(1.0, &spec, 1.0), 4.0);
        assert_eq!(surrogate_grad(1.12, &spec, 1.0), 4.0);
        assert_eq!(surrogate_grad(1.13, &spec, 1.0), 0.0);
        assert_eq!(surrogate_grad(0.87, &spec, 1.0), 0.0);
    }

    #[test]
    fn logistic_is_stable_for_large_arguments() {
        let spec = SurrogateSpec::new(SurrogateKind::SigmoidSoft, 50.0f64);
        assert!(spec.soft_activation(1e6, 0.0) <= 1.0);
        assert!(spec.soft_activation(-1e6, 0.0) >= 0.0);
        assert!(surrogate_grad(1e6, &spec, 0.0).is_finite());
    }
}
