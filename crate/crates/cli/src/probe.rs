//! Empirical scaling probe: measures each rule's learning-state memory
//! (counted scalars from the actually allocated structures, machine
//! independent) and per-step gradient time across sweeps of the time horizon
//! and the layer width, then fits log-log slopes.

use crate::config::Method;
use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use spikebench_core::learn::decolle::{decolle_sequence_deltas, DecolleReadouts};
use spikebench_core::learn::eprop::{eprop_run, ErrorMode, FeedbackMatrices};
use spikebench_core::learn::{bptt, LossSpec};
use spikebench_core::snn::{
    init_network, LayerSpec, LifParams, Network, NetworkConfig, ReadoutMode, SpikeMode,
    SurrogateSpec,
};
use spikebench_core::tensor::SpikeTensor;
use std::fmt::Write as _;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub t_steps: usize,
    pub width: usize,
    pub state_units: usize,
    /// Wall-clock per timestep, diagnostics only.
    pub step_time_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub method: Method,
    pub rows_t: Vec<ProbeRow>,
    pub rows_width: Vec<ProbeRow>,
    /// Fitted log-log slope of state units versus T.
    pub t_slope: f64,
    /// Fitted log-log slope of state units versus layer width.
    pub width_slope: f64,
}

fn probe_net(width: usize, recurrent: bool) -> Network<f64> {
    let cfg = NetworkConfig {
        input_size: 32,
        layers: vec![
            LayerSpec {
                size: width,
                recurrent,
            },
            LayerSpec::ff(2),
        ],
        lif: LifParams::new(0.9, 0.5, 0.5),
        surrogate: SurrogateSpec::default(),
        readout_mode: ReadoutMode::SpikeCount,
    };
    init_network(&cfg, 0).expect("probe network")
}

fn dummy_input(t_steps: usize, channels: usize) -> SpikeTensor<f64> {
    let mut input = SpikeTensor::zeros(t_steps, channels);
    for t in 0..t_steps {
        input.set(t, t % channels, 1.0);
    }
    input
}

/// One measured gradient pass: state units from the rule's real structures,
/// and the wall time divided by T.
fn measure(method: Method, net: &Network<f64>, t_steps: usize) -> Result<(usize, f64)> {
    let input = dummy_input(t_steps, net.n_in());
    let loss = LossSpec::default();
    let start = Instant::now();
    let units = match method {
        Method::Bptt => {
            bptt::bptt_run(net, &input, 0, &loss, SpikeMode::Hard, false)?.trace_units
        }
        Method::Eprop => {
            let fb = FeedbackMatrices::random_fixed(net, 0);
            eprop_run(net, &input, 0, &fb, &loss, ErrorMode::PerStep)?.state_units
        }
        Method::Decolle => {
            let readouts = DecolleReadouts::new_random(net, 2, 0);
            decolle_sequence_deltas(net, &input, 0, &readouts, &loss, 1e-9)?.state_units
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    Ok((units, elapsed * 1e6 / t_steps as f64))
}

/// Least-squares slope of ln(y) against ln(x).
fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in points {
        sx += x.ln();
        sy += y.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in points {
        num += (x.ln() - mx) * (y.ln() - my);
        den += (x.ln() - mx) * (x.ln() - mx);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Runs the probe over a T sweep and a width sweep (both need at least 3
/// points).
pub fn complexity_probe(
    method: Method,
    t_sweep: &[usize],
    width_sweep: &[usize],
    recurrent: bool,
) -> Result<ProbeTable> {
    if t_sweep.len() < 3 || width_sweep.len() < 3 {
        bail!("scaling sweeps need at least 3 points");
    }
    let base_width = 24;
    let net = probe_net(base_width, recurrent);
    let mut rows_t = Vec::new();
    for &t in t_sweep {
        let (units, step_us) = measure(method, &net, t)?;
        rows_t.push(ProbeRow {
            t_steps: t,
            width: base_width,
            state_units: units,
            step_time_us: step_us,
        });
    }
    let base_t = 16;
    let mut rows_width = Vec::new();
    for &w in width_sweep {
        let net = probe_net(w, recurrent);
        let (units, step_us) = measure(method, &net, base_t)?;
        rows_width.push(ProbeRow {
            t_steps: base_t,
            width: w,
            state_units: units,
            step_time_us: step_us,
        });
    }
    let t_slope = log_log_slope(
        &rows_t
            .iter()
            .map(|r| (r.t_steps as f64, r.state_units as f64))
            .collect::<Vec<_>>(),
    );
    let width_slope = log_log_slope(
        &rows_width
            .iter()
            .map(|r| (r.width as f64, r.state_units as f64))
            .collect::<Vec<_>>(),
    );
    Ok(ProbeTable {
        method,
        rows_t,
        rows_width,
        t_slope,
        width_slope,
    })
}

/// Deterministic CSV of the unit counts and slopes (timings go to stdout,
/// not into the file).
pub fn probe_csv(table: &ProbeTable) -> String {
    let mut out = String::from("method,sweep,point,state_units\n");
    for r in &table.rows_t {
        let _ = writeln!(out, "{},t,{},{}", table.method, r.t_steps, r.state_units);
    }
    for r in &table.rows_width {
        let _ = writeln!(out, "{},width,{},{}", table.method, r.width, r.state_units);
    }
    let _ = writeln!(out, "{},slope_t,,{}", table.method, table.t_slope);
    let _ = writeln!(out, "{},slope_width,,{}", table.method, table.width_slope);
    out
}

pub fn print_table(table: &ProbeTable) {
    println!("method: {}", table.method);
    println!("  {:>8} {:>8} {:>14} {:>14}", "T", "width", "state units", "us/step");
    for r in table.rows_t.iter().chain(&table.rows_width) {
        println!(
            "  {:>8} {:>8} {:>14} {:>14.2}",
            r.t_steps, r.width, r.state_units, r.step_time_us
        );
    }
    println!(
        "  state-unit slope vs T: {:.3}   vs width: {:.3}",
        table.t_slope, table.width_slope
    );
}
