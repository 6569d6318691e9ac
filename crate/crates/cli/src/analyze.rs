//! Post-hoc analysis over saved checkpoints: cross-model per-layer CKA
//! (model against model, or model against externally supplied activation
//! dumps) and Fisher information profiles.

use crate::checkpoint::Checkpoint;
use crate::config::Method;
use crate::runner::build_datasets;
use anyhow::{bail, Context, Result};
use ndarray::Array2;
use spikebench_core::analysis::{
    fisher_trace, layer_representations, CkaAccumulator, FisherProfile, GradSource,
    RepresentationBlock, RepresentationSource, YMode,
};
use spikebench_core::data::Dataset;
use spikebench_core::tensor::SpikeTensor;
use std::fmt::Write as _;
use std::path::Path;

/// Layer representations of one side of a CKA comparison: either computed
/// from a checkpointed model or read from an activation dump directory
/// (`layer_0.csv`, `layer_1.csv`, ... with one row per example).
pub enum RepSide<'a> {
    Model(&'a Checkpoint),
    Dump(&'a Path),
}

fn dump_blocks(dir: &Path, rows: usize) -> Result<Vec<Array2<f64>>> {
    let mut blocks = Vec::new();
    for layer in 0.. {
        let path = dir.join(format!("layer_{layer}.csv"));
        if !path.exists() {
            break;
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading dump {}", path.display()))?;
        let mut data: Vec<f64> = Vec::new();
        let mut width = 0usize;
        let mut n_rows = 0usize;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("parsing {}", path.display()))?;
            if width == 0 {
                width = row.len();
            } else if width != row.len() {
                bail!("ragged rows in {}", path.display());
            }
            data.extend(row);
            n_rows += 1;
        }
        if n_rows != rows {
            bail!(
                "{}: expected {rows} rows (one per analysis example), found {n_rows}",
                path.display()
            );
        }
        blocks.push(Array2::from_shape_vec((n_rows, width), data)?);
    }
    if blocks.is_empty() {
        bail!("no layer_*.csv files found in {}", dir.display());
    }
    Ok(blocks)
}

fn batched_reps(
    side: &RepSide<'_>,
    data: &Dataset<f64>,
    batch: usize,
    total: usize,
) -> Result<Vec<Vec<RepresentationBlock<f64>>>> {
    // outer: batches, inner: layers
    let mut out = Vec::new();
    match side {
        RepSide::Model(ckpt) => {
            let mut start = 0;
            while start < total {
                let end = (start + batch).min(total);
                if end - start < 4 {
                    break;
                }
                let refs: Vec<&SpikeTensor<f64>> = data.samples()[start..end]
                    .iter()
                    .map(|(t, _)| t)
                    .collect();
                out.push(layer_representations(
                    &ckpt.net,
                    &refs,
                    RepresentationSource::Spikes,
                )?);
                start = end;
            }
        }
        RepSide::Dump(dir) => {
            let blocks = dump_blocks(dir, total)?;
            let mut start = 0;
            while start < total {
                let end = (start + batch).min(total);
                if end - start < 4 {
                    break;
                }
                let batch_blocks: Vec<RepresentationBlock<f64>> = blocks
                    .iter()
                    .map(|b| {
                        RepresentationBlock::new(b.slice(ndarray::s![start..end, ..]).to_owned())
                            .map_err(|e| anyhow::anyhow!("dump block: {e}"))
                    })
                    .collect::<Result<_>>()?;
                out.push(batch_blocks);
                start = end;
            }
        }
    }
    if out.is_empty() {
        bail!("not enough examples for the unbiased estimator (need >= 4)");
    }
    Ok(out)
}

/// Cross CKA matrix `[layers_a x layers_b]` over the test set of model A's
/// recorded task, using the minibatch-accumulated unbiased estimator.
pub fn cross_cka(
    a: &Checkpoint,
    b: &RepSide<'_>,
    base: &Path,
    batch: usize,
    max_examples: usize,
) -> Result<Vec<Vec<f64>>> {
    let (_, test) = build_datasets(&a.meta.config.task, base)?;
    let total = test.len().min(max_examples);
    let reps_a = batched_reps(&RepSide::Model(a), &test, batch, total)?;
    let reps_b = batched_reps(b, &test, batch, total)?;
    if reps_a.len() != reps_b.len() {
        bail!("representation batch counts differ between the two sides");
    }
    let layers_a = reps_a[0].len();
    let layers_b = reps_b[0].len();
    let mut matrix = vec![vec![0.0; layers_b]; layers_a];
    for (la, row) in matrix.iter_mut().enumerate() {
        for (lb, cell) in row.iter_mut().enumerate() {
            let mut acc = CkaAccumulator::new();
            for (batch_a, batch_b) in reps_a.iter().zip(&reps_b) {
                acc.push(&batch_a[la], &batch_b[lb])
                    .map_err(|e| anyhow::anyhow!("cka accumulation: {e}"))?;
            }
            *cell = acc
                .finalize()
                .map_err(|e| anyhow::anyhow!("cka finalize: {e}"))?;
        }
    }
    Ok(matrix)
}

/// Fisher profile of a checkpointed model on its own task's test set.
pub fn checkpoint_fisher(
    ckpt: &Checkpoint,
    base: &Path,
    upto_t: Option<usize>,
    samples: usize,
    y_seed: u64,
) -> Result<FisherProfile> {
    let (_, test) = build_datasets(&ckpt.meta.config.task, base)?;
    let subset = Dataset::new(
        test.samples()[..samples.min(test.len())].to_vec(),
        test.n_classes(),
    )?;
    let grad_source = match ckpt.meta.config.model.method {
        Method::Bptt => GradSource::Bptt,
        Method::Eprop => match &ckpt.feedback {
            Some(fb) => GradSource::Eprop(fb),
            None => GradSource::Bptt,
        },
        Method::Decolle => match &ckpt.readouts {
            Some(ro) => GradSource::Decolle(ro),
            None => bail!("decolle checkpoint without readouts"),
        },
    };
    let t = upto_t.unwrap_or_else(|| test.t_steps());
    Ok(fisher_trace(
        &ckpt.net,
        &subset,
        t,
        &grad_source,
        YMode::Sampled { seed: y_seed },
        true,
    )?)
}

pub fn matrix_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("layer");
    let cols = matrix.first().map_or(0, |r| r.len());
    for j in 0..cols {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
