//! Finite-difference validation of the hand-derived backward pass.
//!
//! Soft-mode networks are exactly differentiable, so central differences of
//! the soft forward loss are an independent oracle for every weight
//! coordinate, feed-forward and recurrent alike.

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikebench_core::learn::bptt::bptt_gradients_mode;
use spikebench_core::learn::{loss_and_grad, Gradients, LossSpec};
use spikebench_core::snn::{
    forward_soft, init_network, LayerSpec, LifParams, Network, NetworkConfig, ReadoutMode,
    SpikeMode, SurrogateKind, SurrogateSpec,
};
use spikebench_core::tensor::SpikeTensor;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Coordinates whose gradient and FD estimate both sit below this floor are
/// counted as agreeing (the relative error of a ~1e-9 value is FD noise).
const FLOOR: f64 = 1e-6;

fn soft_loss(net: &Network<f64>, input: &SpikeTensor<f64>, target: usize, loss: &LossSpec) -> f64 {
    let scores = forward_soft(net, input).unwrap();
    loss_and_grad(&scores, target, loss).unwrap().0
}

fn finite_difference_gradients(
    net: &Network<f64>,
    input: &SpikeTensor<f64>,
    target: usize,
    loss: &LossSpec,
) -> Gradients<f64> {
    let mut grads = Gradients::zeros_like(net);
    for l in 0..net.n_layers() {
        for i in 0..net.layers[l].n_out() {
            for j in 0..net.layers[l].n_in() {
                let mut plus = net.clone();
                plus.layers[l].w[(i, j)] += FD_STEP;
                let mut minus = net.clone();
                minus.layers[l].w[(i, j)] -= FD_STEP;
                grads.layers[l].dw[(i, j)] = (soft_loss(&plus, input, target, loss)
                    - soft_loss(&minus, input, target, loss))
                    / (2.0 * FD_STEP);
            }
        }
        if net.layers[l].v.is_some() {
            let n = net.layers[l].n_out();
            for i in 0..n {
                for j in 0..n {
                    let mut plus = net.clone();
                    plus.layers[l].v.as_mut().unwrap()[(i, j)] += FD_STEP;
                    let mut minus = net.clone();
                    minus.layers[l].v.as_mut().unwrap()[(i, j)] -= FD_STEP;
                    grads.layers[l].dv.as_mut().unwrap()[(i, j)] =
                        (soft_loss(&plus, input, target, loss)
                            - soft_loss(&minus, input, target, loss))
                            / (2.0 * FD_STEP);
                }
            }
        }
    }
    grads
}

/// Fraction of coordinates within tolerance, and the worst observed error.
fn agreement(analytic: &Gradients<f64>, fd: &Gradients<f64>) -> (f64, f64) {
    let mut total = 0usize;
    let mut ok = 0usize;
    let mut worst = 0.0f64;
    let mut check = |a: f64, b: f64| {
        total += 1;
        let denom = a.abs().max(b.abs());
        let rel = if denom < FLOOR {
            0.0
        } else {
            (a - b).abs() / denom
        };
        if rel <= REL_TOL {
            ok += 1;
        }
        worst = worst.max(rel);
    };
    for (ga, gf) in analytic.layers.iter().zip(&fd.layers) {
        for (&a, &b) in ga.dw.iter().zip(gf.dw.iter()) {
            check(a, b);
        }
        if let (Some(av), Some(fv)) = (ga.dv.as_ref(), gf.dv.as_ref()) {
            for (&a, &b) in av.iter().zip(fv.iter()) {
                check(a, b);
            }
        }
    }
    (ok as f64 / total as f64, worst)
}

fn random_instance(seed: u64) -> (Network<f64>, SpikeTensor<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = rng.random_range(1..=3usize);
    let input_size = rng.random_range(2..=6usize);
    let mut layers = Vec::new();
    let mut budget = 30usize;
    for l in 0..n_layers {
        let size = if l == n_layers - 1 {
            rng.random_range(2..=4usize)
        } else {
            rng.random_range(2..=10usize.min(budget))
        };
        budget = budget.saturating_sub(size).max(2);
        layers.push(LayerSpec {
            size,
            recurrent: l + 1 < n_layers && rng.random_bool(0.5),
        });
    }
    let readout = if rng.random_bool(0.5) {
        ReadoutMode::MembraneSum
    } else {
        ReadoutMode::SpikeCount
    };
    let cfg = NetworkConfig {
        input_size,
        layers,
        lif: LifParams::new(
            rng.random_range(0.3..0.95),
            rng.random_range(0.3..0.95),
            rng.random_range(0.4..1.0),
        ),
        surrogate: SurrogateSpec::new(SurrogateKind::SigmoidSoft, rng.random_range(2.0..6.0)),
        readout_mode: readout,
    };
    let net = init_network(&cfg, rng.random()).unwrap();
    let t_steps = rng.random_range(2..=8usize);
    let mut input = SpikeTensor::zeros(t_steps, input_size);
    for t in 0..t_steps {
        for c in 0..input_size {
            if rng.random_bool(0.45) {
                input.set(t, c, 1.0);
            }
        }
    }
    let target = rng.random_range(0..net.n_out());
    (net, input, target)
}

#[test]
fn soft_mode_gradients_match_central_differences() {
    let loss = LossSpec::default();
    for seed in 0..8u64 {
        let (net, input, target) = random_instance(seed);
        let (analytic, _) =
            bptt_gradients_mode(&net, &input, target, &loss, SpikeMode::Soft).unwrap();
        let fd = finite_difference_gradients(&net, &input, target, &loss);
        let (fraction, worst) = agreement(&analytic, &fd);
        assert!(
            fraction >= 0.99,
            "seed {seed}: only {:.2}% of coordinates within {REL_TOL} (worst {worst:.2e})",
            fraction * 100.0
        );
    }
}

#[test]
fn recurrent_weights_match_central_differences() {
    let loss = LossSpec::default();
    let cfg = NetworkConfig {
        input_size: 3,
        layers: vec![LayerSpec::rec(5), LayerSpec::ff(3)],
        lif: LifParams::new(0.8, 0.6, 0.5),
        surrogate: SurrogateSpec::new(SurrogateKind::SigmoidSoft, 4.0),
        readout_mode: ReadoutMode::MembraneSum,
    };
    let net = init_network(&cfg, 77).unwrap();
    let mut input = SpikeTensor::zeros(3, 3);
    input.set(0, 0, 1.0);
    input.set(1, 2, 1.0);
    input.set(2, 1, 1.0);
    let (analytic, _) = bptt_gradients_mode(&net, &input, 1, &loss, SpikeMode::Soft).unwrap();
    let fd = finite_difference_gradients(&net, &input, 1, &loss);
    let dv_a = analytic.layers[0].dv.as_ref().unwrap();
    let dv_f = fd.layers[0].dv.as_ref().unwrap();
    for (&a, &b) in dv_a.iter().zip(dv_f.iter()) {
        let denom = a.abs().max(b.abs()).max(FLOOR);
        assert!(
            (a - b).abs() / denom <= REL_TOL,
            "recurrent coordinate: analytic {a} vs fd {b}"
        );
    }
}

#[test]
fn mse_loss_gradients_also_match() {
    let loss = LossSpec {
        kind: spikebench_core::learn::LossKind::MeanSquared,
    };
    let (net, input, target) = random_instance(101);
    let (analytic, _) = bptt_gradients_mode(&net, &input, target, &loss, SpikeMode::Soft).unwrap();
    let fd = finite_difference_gradients(&net, &input, target, &loss);
    let (fraction, worst) = agreement(&analytic, &fd);
    assert!(fraction >= 0.99, "fraction {fraction}, worst {worst:.2e}");
}

#[test]
fn input_gradient_matches_central_differences() {
    // the surrogate-direct FGSM route differentiates the loss w.r.t. the
    // input raster; validate it on the soft oracle as well
    let loss = LossSpec::default();
    let cfg = NetworkConfig {
        input_size: 4,
        layers: vec![LayerSpec::ff(5), LayerSpec::ff(2)],
        lif: LifParams::new(0.85, 0.6, 0.5),
        surrogate: SurrogateSpec::new(SurrogateKind::SigmoidSoft, 4.0),
        readout_mode: ReadoutMode::MembraneSum,
    };
    let net = init_network(&cfg, 5).unwrap();
    let mut input = SpikeTensor::zeros(4, 4);
    for t in 0..4 {
        input.set(t, (t * 2) % 4, 0.8);
    }
    let out = spikebench_core::learn::bptt::bptt_run(
        &net,
        &input,
        0,
        &loss,
        SpikeMode::Soft,
        true,
    )
    .unwrap();
    let grad = out.input_gradient.unwrap();
    for t in 0..4 {
        for c in 0..4 {
            let mut plus = input.clone();
            plus.set(t, c, input.get(t, c) + FD_STEP);
            let mut minus = input.clone();
            minus.set(t, c, (input.get(t, c) - FD_STEP).max(0.0));
            // keep the step symmetric: entries we perturb start at 0.8 or 0.0;
            // skip zero entries where the minus side would clip
            if input.get(t, c) == 0.0 {
                continue;
            }
            let fd = (soft_loss(&net, &plus, 0, &loss) - soft_loss(&net, &minus, 0, &loss))
                / (2.0 * FD_STEP);
            let denom = grad[(t, c)].abs().max(fd.abs()).max(FLOOR);
            assert!(
                (grad[(t, c)] - fd).abs() / denom <= REL_TOL,
                "input ({t},{c}): analytic {} vs fd {fd}",
                grad[(t, c)]
            );
        }
    }
}

/// A sanity pin separate from the FD oracle: in a one-step, one-layer soft
/// network the loss is a closed-form function of the single weight; the
/// analytic gradient is hand-derivable.
#[test]
fn one_step_closed_form_gradient() {
    let cfg = NetworkConfig {
        input_size: 1,
        layers: vec![LayerSpec::ff(2)],
        lif: LifParams::new(1.0, 1.0, 1.0),
        surrogate: SurrogateSpec::new(SurrogateKind::SigmoidSoft, 3.0),
        readout_mode: ReadoutMode::MembraneSum,
    };
    let mut net = init_network(&cfg, 0).unwrap();
    net.layers[0].w = ndarray::array![[0.7], [-0.2]];
    let mut input = SpikeTensor::zeros(1, 1);
    input.set(0, 0, 1.0);
    // scores z = (0.7, -0.2); d loss / d w_k0 = (softmax - onehot)_k * x
    let scores = forward_soft(&net, &input).unwrap();
    let p = spikebench_core::learn::softmax(&scores);
    let expected: Array1<f64> = ndarray::array![p[0] - 1.0, p[1]];
    let (grads, _) = bptt_gradients_mode(
        &net,
        &input,
        0,
        &LossSpec::default(),
        SpikeMode::Soft,
    )
    .unwrap();
    assert!((grads.layers[0].dw[(0, 0)] - expected[0]).abs() < 1e-12);
    assert!((grads.layers[0].dw[(1, 0)] - expected[1]).abs() < 1e-12);
}
