//! Experiment reports and their deterministic CSV/JSON emission.
//!
//! File naming: `{method}_{arch}_{seed}.{ext}` per seed, plus
//! `aggregate.json` / `aggregate.csv`. Wall-clock timings are diagnostics
//! and go to a separate `timing.json`, never into the deterministic report
//! files.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spikebench_core::analysis::FisherProfile;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgsmRow {
    pub epsilon: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackdoorRow {
    pub rate: f64,
    pub asr: f64,
    pub clean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub epochs: Vec<EpochRow>,
    pub test_accuracy: f64,
    /// Learning-state scalars held by the rule during one gradient pass
    /// (counted units, machine independent).
    pub learning_state_units: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cka_layer_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fgsm: Vec<FgsmRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backdoor: Vec<BackdoorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_test_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fgsm: Vec<FgsmRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backdoor: Vec<BackdoorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedReport>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_errors: Vec<String>,
    /// Non-deterministic diagnostics; excluded from report serialization.
    #[serde(skip)]
    pub wall_time_secs: Vec<(u64, f64)>,
}

impl ExperimentReport {
    /// Aggregates are the plain mean over the listed seeds.
    pub fn aggregate_from_seeds(config: &ExperimentConfig, per_seed: &[SeedReport]) -> Aggregate {
        let n = per_seed.len().max(1) as f64;
        let mean_test_accuracy = per_seed.iter().map(|s| s.test_accuracy).sum::<f64>() / n;
        let _ = config;
        let mut fgsm: Vec<FgsmRow> = Vec::new();
        if let Some(first) = per_seed.first() {
            for (i, row) in first.fgsm.iter().enumerate() {
                let mean = per_seed.iter().map(|s| s.fgsm[i].accuracy).sum::<f64>() / n;
                fgsm.push(FgsmRow {
                    epsilon: row.epsilon,
                    accuracy: mean,
                });
            }
        }
        let mut backdoor: Vec<BackdoorRow> = Vec::new();
        if let Some(first) = per_seed.first() {
            for (i, row) in first.backdoor.iter().enumerate() {
                let asr = per_seed.iter().map(|s| s.backdoor[i].asr).sum::<f64>() / n;
                let clean = per_seed
                    .iter()
                    .map(|s| s.backdoor[i].clean_accuracy)
                    .sum::<f64>()
                    / n;
                backdoor.push(BackdoorRow {
                    rate: row.rate,
                    asr,
                    clean_accuracy: clean,
                });
            }
        }
        Aggregate {
            mean_test_accuracy,
            fgsm,
            backdoor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the report files into `out_dir` and returns the paths written.
pub fn emit_report(
    report: &ExperimentReport,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut written = Vec::new();
    let config = &report.config;
    match format {
        ReportFormat::Json => {
            for seed_report in &report.per_seed {
                let path = out_dir.join(format!("{}.json", config.file_stem(seed_report.seed)));
                std::fs::write(&path, serde_json::to_string_pretty(seed_report)?)?;
                written.push(path);
            }
            let path = out_dir.join("aggregate.json");
            std::fs::write(&path, serde_json::to_string_pretty(report)?)?;
            written.push(path);
        }
        ReportFormat::Csv => {
            for seed_report in &report.per_seed {
                let stem = config.file_stem(seed_report.seed);
                let path = out_dir.join(format!("{stem}.csv"));
                std::fs::write(&path, epoch_csv(seed_report))?;
                written.push(path);

                if !seed_report.fgsm.is_empty() || !seed_report.backdoor.is_empty() {
                    let path = out_dir.join(format!("{stem}_attacks.csv"));
                    std::fs::write(&path, attacks_csv(config, seed_report))?;
                    written.push(path);
                }
                if let Some(matrix) = &seed_report.cka_layer_matrix {
                    let path = out_dir.join(format!("{stem}_cka.csv"));
                    std::fs::write(&path, cka_csv(matrix))?;
                    written.push(path);
                }
                if let Some(fisher) = &seed_report.fisher {
                    let path = out_dir.join(format!("{stem}_fisher.csv"));
                    std::fs::write(&path, fisher_csv(fisher))?;
                    written.push(path);
                }
            }
            let path = out_dir.join("aggregate.csv");
            std::fs::write(&path, aggregate_csv(report))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes the wall-clock diagnostics sidecar (not part of the deterministic
/// report contract).
pub fn emit_timing(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    if report.wall_time_secs.is_empty() {
        return Ok(());
    }
    let rows: Vec<serde_json::Value> = report
        .wall_time_secs
        .iter()
        .map(|(seed, secs)| serde_json::json!({ "seed": seed, "wall_time_secs": secs }))
        .collect();
    std::fs::write(
        out_dir.join("timing.json"),
        serde_json::to_string_pretty(&rows)?,
    )?;
    Ok(())
}

fn epoch_csv(seed_report: &SeedReport) -> String {
    let mut out = String::from("epoch,mean_loss,train_accuracy\n");
    for row in &seed_report.epochs {
        let _ = writeln!(out, "{},{},{}", row.epoch, row.mean_loss, row.train_accuracy);
    }
    out
}

fn attacks_csv(config: &ExperimentConfig, seed_report: &SeedReport) -> String {
    let mut out = String::from("method,architecture,kind,param,accuracy,asr,seed\n");
    for row in &seed_report.fgsm {
        let _ = writeln!(
            out,
            "{},{},fgsm,{},{},,{}",
            config.model.method,
            config.model.architecture,
            row.epsilon,
            row.accuracy,
            seed_report.seed
        );
    }
    for row in &seed_report.backdoor {
        let _ = writeln!(
            out,
            "{},{},backdoor,{},{},{},{}",
            config.model.method,
            config.model.architecture,
            row.rate,
            row.clean_accuracy,
            row.asr,
            seed_report.seed
        );
    }
    out
}

fn cka_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("layer");
    for j in 0..matrix.len() {
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

fn fisher_csv(profile: &FisherProfile) -> String {
    let mut out = String::from("layer,group,value\n");
    for g in &profile.groups {
        let kind = match g.kind {
            spikebench_core::analysis::WeightGroupKind::Linear => "linear",
            spikebench_core::analysis::WeightGroupKind::Recurrent => "recurrent",
        };
        let _ = writeln!(out, "{},{},{}", g.layer, kind, g.value);
    }
    out
}

fn aggregate_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("method,architecture,seed,test_accuracy\n");
    for seed_report in &report.per_seed {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            report.config.model.method,
            report.config.model.architecture,
            seed_report.seed,
            seed_report.test_accuracy
        );
    }
    let _ = writeln!(
        out,
        "{},{},mean,{}",
        report.config.model.method,
        report.config.model.architecture,
        report.aggregate.mean_test_accuracy
    );
    out
}

/// Reads a previously emitted `aggregate.json` back into a report.
pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading report {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
