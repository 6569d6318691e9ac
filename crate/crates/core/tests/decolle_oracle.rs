//! Independent naive implementation of the local-learning update chain
//! (readout, local loss, pulled-back error, trace-weighted delta) checked
//! against the production code at 1e-12 on random instances.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikebench_core::learn::decolle::{
    decolle_step_update, trace_update, DecolleReadouts, LocalReadout, PresynapticTrace,
};
use spikebench_core::learn::{LossKind, LossSpec};
use spikebench_core::snn::{
    surrogate_grad, LayerParams, LayerState, LifParams, SurrogateKind, SurrogateSpec,
};

/// Textbook evaluation, written without reference to the production code:
/// y_k = sum_i g_ki s_i; cross-entropy gradient at y; err_i = sum_k g_ki
/// dl/dy_k; dw_ij = -eta err_i sigma'(u_i) p_j.
#[allow(clippy::needless_range_loop)]
fn naive_update(
    g: &Array2<f64>,
    spikes: &Array1<f64>,
    potential: &Array1<f64>,
    p: &Array1<f64>,
    v_th: f64,
    slope: f64,
    target: usize,
    eta: f64,
) -> Array2<f64> {
    let n_classes = g.nrows();
    let n_out = g.ncols();
    let n_in = p.len();

    let mut y = vec![0.0; n_classes];
    for k in 0..n_classes {
        for i in 0..n_out {
            y[k] += g[(k, i)] * spikes[i];
        }
    }
    // softmax cross-entropy gradient
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut dldy: Vec<f64> = exps.iter().map(|e| e / z).collect();
    dldy[target] -= 1.0;

    let mut err = vec![0.0; n_out];
    for i in 0..n_out {
        for k in 0..n_classes {
            err[i] += g[(k, i)] * dldy[k];
        }
    }

    let mut dw = Array2::zeros((n_out, n_in));
    for i in 0..n_out {
        let sigma = {
            let d = (potential[i] - v_th).abs();
            1.0 / (1.0 + slope * d).powi(2)
        };
        for j in 0..n_in {
            dw[(i, j)] = -eta * err[i] * sigma * p[j];
        }
    }
    dw
}

#[test]
fn step_update_matches_naive_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..25 {
        let n_in = rng.random_range(1..=6usize);
        let n_out = rng.random_range(1..=6usize);
        let n_classes = rng.random_range(2..=4usize);
        let v_th = rng.random_range(0.3..1.2);
        let slope = rng.random_range(2.0..12.0);
        let eta = rng.random_range(0.001..0.5);
        let target = rng.random_range(0..n_classes);

        let layer = LayerParams {
            w: Array2::zeros((n_out, n_in)),
            v: None,
            lif: LifParams::new(0.9, 0.5, v_th),
        };
        let state = LayerState {
            current: Array1::zeros(n_out),
            potential: Array1::from_shape_fn(n_out, |_| rng.random_range(-1.0..2.0)),
            spikes: Array1::from_shape_fn(n_out, |_| {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        let trace = PresynapticTrace {
            q: Array1::from_shape_fn(n_in, |_| rng.random_range(0.0..2.0)),
            p: Array1::from_shape_fn(n_in, |_| rng.random_range(0.0..3.0)),
        };
        let readout = LocalReadout {
            g: Array2::from_shape_fn((n_classes, n_out), |_| rng.random_range(-1.0..1.0)),
        };
        let delta = decolle_step_update(
            &layer,
            &state,
            &trace,
            None,
            &readout,
            &SurrogateSpec::new(SurrogateKind::FastSigmoid, slope),
            target,
            &LossSpec::default(),
            eta,
        )
        .unwrap();
        let naive = naive_update(
            &readout.g,
            &state.spikes,
            &state.potential,
            &trace.p,
            v_th,
            slope,
            target,
            eta,
        );
        for (a, b) in delta.dw.iter().zip(naive.iter()) {
            assert!(
                (a - b).abs() <= 1e-12,
                "case {case}: production {a} vs naive {b}"
            );
        }
    }
}

#[test]
fn recurrent_delta_uses_the_delayed_own_spike_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4usize;
    let layer: LayerParams<f64> = LayerParams {
        w: Array2::zeros((n, 3)),
        v: Some(Array2::zeros((n, n))),
        lif: LifParams::new(0.8, 0.6, 0.7),
    };
    let state = LayerState {
        current: Array1::zeros(n),
        potential: Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.5)),
        spikes: Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }),
    };
    let trace = PresynapticTrace {
        q: Array1::zeros(3),
        p: Array1::from_shape_fn(3, |_| rng.random_range(0.0..1.0)),
    };
    let rec_trace = PresynapticTrace {
        q: Array1::zeros(n),
        p: Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.0)),
    };
    let readout = LocalReadout {
        g: Array2::from_shape_fn((2, n), |_| rng.random_range(-1.0..1.0)),
    };
    let surrogate = SurrogateSpec::new(SurrogateKind::FastSigmoid, 10.0);
    let delta = decolle_step_update(
        &layer,
        &state,
        &trace,
        Some(&rec_trace),
        &readout,
        &surrogate,
        1,
        &LossSpec::default(),
        0.1,
    )
    .unwrap();
    let dv = delta.dv.unwrap();
    // dv rows must be proportional to the recurrent trace p, with the same
    // per-neuron factor as dw
    for i in 0..n {
        let sigma = surrogate_grad(state.potential[i], &surrogate, 0.7);
        if sigma == 0.0 {
            continue;
        }
        for j in 0..n {
            let factor_from_dw = if trace.p[0] != 0.0 {
                delta.dw[(i, 0)] / trace.p[0]
            } else {
                continue;
            };
            assert!(
                (dv[(i, j)] - factor_from_dw * rec_trace.p[j]).abs() < 1e-12,
                "recurrent delta should reuse the per-neuron factor"
            );
        }
    }
}

#[test]
fn mse_local_loss_zero_when_readout_hits_target_exactly() {
    let layer = LayerParams {
        w: Array2::zeros((2, 2)),
        v: None,
        lif: LifParams::new(0.9, 0.5, 1.0),
    };
    // g chosen so y = (1, 0) when both neurons spike
    let readout = LocalReadout {
        g: ndarray::array![[0.5, 0.5], [0.0, 0.0]],
    };
    let state = LayerState {
        current: Array1::zeros(2),
        potential: ndarray::array![1.0, 1.0],
        spikes: ndarray::array![1.0, 1.0],
    };
    let trace = PresynapticTrace {
        q: ndarray::array![1.0, 1.0],
        p: ndarray::array![0.7, 0.3],
    };
    let delta = decolle_step_update(
        &layer,
        &state,
        &trace,
        None,
        &readout,
        &SurrogateSpec::default(),
        0,
        &LossSpec {
            kind: LossKind::MeanSquared,
        },
        0.05,
    )
    .unwrap();
    assert_eq!(delta.loss, 0.0);
    assert!(delta.dw.iter().all(|&x| x == 0.0));
}

#[test]
fn whole_sequence_matches_a_naive_sequence_oracle() {
    // drive a 1-layer network and replicate the entire per-step pipeline
    // naively: LIF recursion, double-filtered trace, readout loss, deltas
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n_in, n_out, t_steps) = (3usize, 2usize, 7usize);
    let w = Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-0.8..0.8));
    let (a_s, a_m, v_th, slope, eta) = (0.85, 0.55, 0.6, 8.0, 0.02);

    let net = spikebench_core::snn::Network {
        layers: vec![LayerParams {
            w: w.clone(),
            v: None,
            lif: LifParams::new(a_s, a_m, v_th),
        }],
        readout_mode: spikebench_core::snn::ReadoutMode::SpikeCount,
        surrogate: SurrogateSpec::new(SurrogateKind::FastSigmoid, slope),
    };
    let readouts = DecolleReadouts {
        per_layer: vec![LocalReadout {
            g: Array2::from_shape_fn((2, n_out), |_| rng.random_range(-1.0..1.0)),
        }],
    };
    let mut input = spikebench_core::tensor::SpikeTensor::zeros(t_steps, n_in);
    for t in 0..t_steps {
        for c in 0..n_in {
            if rng.random_bool(0.5) {
                input.set(t, c, 1.0);
            }
        }
    }

    let out = spikebench_core::learn::decolle::decolle_sequence_deltas(
        &net,
        &input,
        1,
        &readouts,
        &LossSpec::default(),
        eta,
    )
    .unwrap();

    // naive replay
    let mut current = vec![0.0f64; n_out];
    let mut potential = vec![0.0f64; n_out];
    let mut prev_spikes = vec![0.0f64; n_out];
    let (mut q, mut p) = (vec![0.0f64; n_in], vec![0.0f64; n_in]);
    let mut dw_total = Array2::<f64>::zeros((n_out, n_in));
    for t in 0..t_steps {
        for i in 0..n_out {
            let mut drive = 0.0;
            for j in 0..n_in {
                drive += w[(i, j)] * input.get(t, j);
            }
            current[i] = a_s * current[i] + drive;
            potential[i] = a_m * potential[i] + current[i] - v_th * prev_spikes[i];
        }
        let spikes: Vec<f64> = potential
            .iter()
            .map(|&u| if u > v_th { 1.0 } else { 0.0 })
            .collect();
        for j in 0..n_in {
            q[j] = a_s * q[j] + input.get(t, j);
            p[j] = a_m * p[j] + q[j];
        }
        let spikes_arr = Array1::from_vec(spikes.clone());
        let pot_arr = Array1::from_vec(potential.clone());
        let p_arr = Array1::from_vec(p.clone());
        dw_total = dw_total
            + naive_update(
                &readouts.per_layer[0].g,
                &spikes_arr,
                &pot_arr,
                &p_arr,
                v_th,
                slope,
                1,
                eta,
            );
        prev_spikes = spikes;
    }

    for (a, b) in out.deltas.layers[0].dw.iter().zip(dw_total.iter()) {
        assert!((a - b).abs() <= 1e-12, "sequence oracle: {a} vs {b}");
    }
}
