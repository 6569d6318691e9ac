//! The key e-prop oracle: on a single trainable layer with no recurrence
//! and detached reset, the eligibility rule is an exact rewrite of BPTT —
//! the truncation only bites once inter-neuron temporal dependencies exist.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikebench_core::learn::bptt::bptt_gradients;
use spikebench_core::learn::eprop::{
    eprop_run, ErrorMode, FeedbackMatrices,
};
use spikebench_core::learn::{LossSpec, Optimizer, OptimizerSpec};
use spikebench_core::snn::{
    init_network, LayerSpec, LifParams, Network, NetworkConfig, ReadoutMode, SurrogateKind,
    SurrogateSpec,
};
use spikebench_core::tensor::SpikeTensor;

fn random_single_layer(seed: u64) -> (Network<f64>, SpikeTensor<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_size = rng.random_range(2..=8usize);
    let n_classes = rng.random_range(2..=5usize);
    let readout = if rng.random_bool(0.5) {
        ReadoutMode::MembraneSum
    } else {
        ReadoutMode::SpikeCount
    };
    let cfg = NetworkConfig {
        input_size,
        layers: vec![LayerSpec::ff(n_classes)],
        lif: LifParams::new(
            rng.random_range(0.2..0.99),
            rng.random_range(0.2..0.99),
            rng.random_range(0.3..1.0),
        ),
        surrogate: SurrogateSpec::new(SurrogateKind::FastSigmoid, rng.random_range(2.0..12.0)),
        readout_mode: readout,
    };
    let net = init_network(&cfg, rng.random()).unwrap();
    let t_steps = rng.random_range(2..=12usize);
    let mut input = SpikeTensor::zeros(t_steps, input_size);
    for t in 0..t_steps {
        for c in 0..input_size {
            if rng.random_bool(0.5) {
                input.set(t, c, 1.0);
            }
        }
    }
    let target = rng.random_range(0..n_classes);
    (net, input, target)
}

#[test]
fn single_layer_eprop_equals_bptt() {
    let loss = LossSpec::default();
    for seed in 0..20u64 {
        let (net, input, target) = random_single_layer(seed);
        let fb = FeedbackMatrices::symmetric(&net); // empty: no hidden layers
        let (bptt, _) = bptt_gradients(&net, &input, target, &loss).unwrap();
        let eprop = eprop_run(&net, &input, target, &fb, &loss, ErrorMode::EndOfSequence)
            .unwrap()
            .gradients;
        let diff = bptt.max_relative_diff(&eprop, 1e-12);
        assert!(
            diff <= 1e-6,
            "seed {seed}: max relative gradient difference {diff:.3e}"
        );
    }
}

#[test]
fn two_layer_eprop_differs_from_bptt_but_learns() {
    // the truncation is real on deep nets: hidden gradients differ, yet the
    // rule still reduces the loss on a separable task
    let loss = LossSpec::default();
    let cfg = NetworkConfig {
        input_size: 10,
        layers: vec![LayerSpec::ff(8), LayerSpec::ff(2)],
        lif: LifParams::new(0.9, 0.6, 0.4),
        surrogate: SurrogateSpec::default(),
        readout_mode: ReadoutMode::MembraneSum,
    };
    let net = init_network(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut input = SpikeTensor::zeros(6, 10);
    for t in 0..6 {
        for c in 0..10 {
            if rng.random_bool(0.4) {
                input.set(t, c, 1.0);
            }
        }
    }
    let fb = FeedbackMatrices::symmetric(&net);
    let (bptt, _) = bptt_gradients(&net, &input, 0, &loss).unwrap();
    let eprop = eprop_run(&net, &input, 0, &fb, &loss, ErrorMode::EndOfSequence)
        .unwrap()
        .gradients;
    let hidden_diff = bptt.layers[0]
        .dw
        .iter()
        .zip(eprop.layers[0].dw.iter())
        .map(|(a, b): (&f64, &f64)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        hidden_diff > 1e-9,
        "hidden gradients should differ once a layer sits below another"
    );

    // training still works: first epochs reduce the loss
    let data = spikebench_core::data::synth_pattern_dataset::<f64>(
        &spikebench_core::data::SynthSpec {
            classes: 2,
            n_per_class: 20,
            t_steps: 8,
            channels: 10,
            jitter: 0.05,
            density: 0.3,
            seed: 3,
        },
    )
    .unwrap();
    let mut net = init_network(&cfg, 4).unwrap();
    let fb = FeedbackMatrices::random_fixed(&net, 0);
    let mut opt = Optimizer::new(OptimizerSpec::sgd(0.002));
    let first = spikebench_core::learn::eprop::train_epoch_eprop(
        &mut net, &data, &fb, &loss, &mut opt, 8, 0, ErrorMode::PerStep,
    )
    .unwrap();
    let mut last = first;
    for epoch in 1..6u64 {
        last = spikebench_core::learn::eprop::train_epoch_eprop(
            &mut net, &data, &fb, &loss, &mut opt, 8, epoch, ErrorMode::PerStep,
        )
        .unwrap();
    }
    assert!(
        last.mean_loss < first.mean_loss,
        "loss should decrease: {} -> {}",
        first.mean_loss,
        last.mean_loss
    );
}

#[test]
fn learning_state_is_t_independent() {
    let cfg = NetworkConfig {
        input_size: 6,
        layers: vec![LayerSpec::rec(5), LayerSpec::ff(2)],
        lif: LifParams::new(0.9, 0.5, 0.4),
        surrogate: SurrogateSpec::default(),
        readout_mode: ReadoutMode::MembraneSum,
    };
    let net = init_network(&cfg, 0).unwrap();
    let fb = FeedbackMatrices::random_fixed(&net, 0);
    let loss = LossSpec::default();
    let mut units = Vec::new();
    for t_steps in [4usize, 16, 64] {
        let input = SpikeTensor::zeros(t_steps, 6);
        let out = eprop_run(&net, &input, 0, &fb, &loss, ErrorMode::PerStep).unwrap();
        units.push(out.state_units);
    }
    assert_eq!(units[0], units[1]);
    assert_eq!(units[1], units[2]);
}

#[test]
fn random_vs_symmetric_feedback_both_learn_symmetric_no_worse() {
    let loss = LossSpec::default();
    let data = spikebench_core::data::synth_pattern_dataset::<f64>(
        &spikebench_core::data::SynthSpec {
            classes: 2,
            n_per_class: 25,
            t_steps: 8,
            channels: 12,
            jitter: 0.08,
            density: 0.3,
            seed: 9,
        },
    )
    .unwrap();
    let cfg = NetworkConfig {
        input_size: 12,
        layers: vec![LayerSpec::ff(10), LayerSpec::ff(2)],
        lif: LifParams::new(0.9, 0.6, 0.4),
        surrogate: SurrogateSpec::default(),
        readout_mode: ReadoutMode::MembraneSum,
    };

    let accuracy = |symmetric: bool| -> f64 {
        let mut acc_sum = 0.0;
        for seed in 0..5u64 {
            let mut net = init_network(&cfg, seed).unwrap();
            let fb = if symmetric {
                FeedbackMatrices::symmetric(&net)
            } else {
                FeedbackMatrices::random_fixed(&net, seed + 100)
            };
            let mut opt = Optimizer::new(OptimizerSpec::sgd(0.004));
            let mut stats = None;
            for epoch in 0..12u64 {
                stats = Some(
                    spikebench_core::learn::eprop::train_epoch_eprop(
                        &mut net, &data, &fb, &loss, &mut opt, 10, epoch, ErrorMode::PerStep,
                    )
                    .unwrap(),
                );
            }
            acc_sum += stats.unwrap().accuracy;
        }
        acc_sum / 5.0
    };

    let random_acc = accuracy(false);
    let symmetric_acc = accuracy(true);
    assert!(random_acc > 0.5, "random feedback should beat chance");
    assert!(
        symmetric_acc >= random_acc - 0.02,
        "symmetric ({symmetric_acc}) should not trail random ({random_acc})"
    );
}
