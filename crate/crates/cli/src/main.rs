//! `bench`: train spiking networks with learning rules of varying locality,
//! attack them, analyze their representations and parameter importance, and
//! probe the rules' memory/time scaling.

mod analyze;
mod checkpoint;
mod config;
mod probe;
mod report;
mod runner;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, Method};
use report::{emit_report, emit_timing, ReportFormat};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Spiking-network learning-rule benchmark runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the config (all seeds), evaluate, run configured analyses
    /// and attacks, and emit reports.
    Train(TrainArgs),
    /// Attack a saved model (FGSM sweep) or run full poisoning campaigns
    /// from a config.
    Attack(AttackArgs),
    /// CKA and Fisher analysis over saved checkpoints.
    Analyze(AnalyzeArgs),
    /// Learning-state memory and per-step time scaling probe.
    Probe(ProbeArgs),
    /// Re-emit CSV/JSON files from a saved JSON report.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        match (&self.config, &self.preset) {
            (Some(path), None) => Ok((
                ExperimentConfig::from_path(path)?,
                path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            )),
            (None, Some(name)) => {
                if name == "list" {
                    bail!("available presets:\n  {}", config::preset_names().join("\n  "));
                }
                Ok((config::preset(name)?, PathBuf::from(".")))
            }
            _ => bail!("pass exactly one of --config or --preset"),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory for reports.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Also save model checkpoints into the output directory.
    #[arg(long)]
    save_models: bool,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Saved checkpoint: run an evaluation-only FGSM sweep against it
    /// (dataset reconstructed from its sidecar config).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated FGSM epsilon sweep, e.g. 0.001,0.005,0.01.
    #[arg(long, value_delimiter = ',')]
    fgsm_eps: Vec<f64>,
    /// Comma-separated poison-rate sweep (runs full retraining campaigns).
    #[arg(long, value_delimiter = ',')]
    poison_rates: Vec<f64>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// First model checkpoint.
    #[arg(long)]
    model_a: PathBuf,
    /// Second model checkpoint for cross-model CKA.
    #[arg(long)]
    model_b: Option<PathBuf>,
    /// Directory of externally supplied activation dumps (layer_0.csv, ...)
    /// standing in for the second model.
    #[arg(long)]
    dump_b: Option<PathBuf>,
    /// Also emit Fisher profiles.
    #[arg(long)]
    fisher: bool,
    /// Timestep prefix for the Fisher truncation (defaults to full T).
    #[arg(long)]
    upto_t: Option<usize>,
    #[arg(long, default_value_t = 128)]
    cka_batch: usize,
    #[arg(long, default_value_t = 4096)]
    max_examples: usize,
    #[arg(long, default_value_t = 64)]
    fisher_samples: usize,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    /// Learning rule to probe: bptt | eprop | decolle.
    #[arg(long)]
    method: String,
    /// Comma-separated T sweep (needs >= 3 points), e.g. 10,50,100.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64])]
    t: Vec<usize>,
    /// Comma-separated hidden-width sweep (needs >= 3 points).
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64])]
    sizes: Vec<usize>,
    /// Probe the explicitly recurrent architecture.
    #[arg(long)]
    rec: bool,
    /// Optional CSV output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing a previously emitted aggregate.json.
    #[arg(long, name = "in")]
    in_dir: PathBuf,
    /// Output directory (defaults to the input directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_thread_pool() {
    if let Ok(threads) = std::env::var("BENCH_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn main() -> Result<()> {
    init_thread_pool();
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (mut config, base) = args.source.load()?;
    if let Some(seed) = args.seed {
        config.train.seeds = vec![seed];
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    let (report, models) = runner::run_experiment_with_models(&config, &base)?;

    emit_report(&report, ReportFormat::Json, &args.out)?;
    emit_report(&report, ReportFormat::Csv, &args.out)?;
    emit_timing(&report, &args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_toml_string()?)?;

    if args.save_models {
        let (train_data, _) = runner::build_datasets(&config.task, &base)?;
        for (seed, model) in &models {
            let path = args.out.join(format!("{}.ckpt", config.file_stem(*seed)));
            let test_accuracy = report
                .per_seed
                .iter()
                .find(|s| s.seed == *seed)
                .map(|s| s.test_accuracy);
            checkpoint::save(
                &path,
                &checkpoint::Checkpoint {
                    net: model.net.clone(),
                    feedback: model.feedback.clone(),
                    readouts: model.readouts.clone(),
                    meta: checkpoint::CheckpointMeta {
                        version: 1,
                        seed: *seed,
                        config: config.clone(),
                        input_size: train_data.channels(),
                        n_classes: train_data.n_classes(),
                        test_accuracy,
                    },
                },
            )?;
        }
    }

    for line in &report.stage_errors {
        eprintln!("stage error: {line}");
    }
    println!(
        "{} {}: mean test accuracy {:.4} over {} seed(s); reports in {}",
        config.model.method,
        config.model.architecture,
        report.aggregate.mean_test_accuracy,
        report.per_seed.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    if let Some(model_path) = &args.model {
        // evaluation-only sweep against a saved model
        if args.fgsm_eps.is_empty() {
            bail!("--model mode needs --fgsm-eps");
        }
        let ckpt = checkpoint::load(model_path)?;
        let base = model_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut config = ckpt.meta.config.clone();
        config.attack.fgsm_eps = args.fgsm_eps.clone();
        config.attack.poison_rates.clear();
        let (_, test) = runner::build_datasets(&config.task, &base)?;
        let model = runner::TrainedModel {
            net: ckpt.net.clone(),
            feedback: ckpt.feedback.clone(),
            readouts: ckpt.readouts.clone(),
            epochs: Vec::new(),
        };
        std::fs::create_dir_all(&args.out)?;
        let mut csv = String::from("method,architecture,kind,param,accuracy,asr,seed\n");
        for &epsilon in &config.attack.fgsm_eps {
            let cfg = spikebench_core::attacks::FgsmConfig::new(epsilon, config.attack.fgsm_mode);
            let mut correct = 0usize;
            for (tensor, label) in test.samples() {
                let adv = match &ckpt.readouts {
                    Some(readouts) => spikebench_core::attacks::fgsm_perturb_model(
                        &spikebench_core::attacks::build_ann_counterpart(&ckpt.net)
                            .with_output_map(readouts.per_layer.last().unwrap().g.clone()),
                        tensor,
                        *label,
                        &cfg,
                    )?,
                    None => spikebench_core::attacks::fgsm_perturb(&ckpt.net, tensor, *label, &cfg)?,
                };
                if runner::predict(&model, &adv)? == *label {
                    correct += 1;
                }
            }
            let accuracy = correct as f64 / test.len() as f64;
            use std::fmt::Write as _;
            let _ = writeln!(
                csv,
                "{},{},fgsm,{},{},,{}",
                config.model.method,
                config.model.architecture,
                epsilon,
                accuracy,
                ckpt.meta.seed
            );
            println!("epsilon {epsilon}: accuracy {accuracy:.4}");
        }
        let path = args.out.join(format!(
            "{}_attacks.csv",
            config.file_stem(ckpt.meta.seed)
        ));
        std::fs::write(&path, csv)?;
        println!("sweep written to {}", path.display());
        return Ok(());
    }

    // full campaign from a config (retrains as needed)
    let (mut config, base) = args.source.load()?;
    if !args.fgsm_eps.is_empty() {
        config.attack.fgsm_eps = args.fgsm_eps.clone();
    }
    if !args.poison_rates.is_empty() {
        config.attack.poison_rates = args.poison_rates.clone();
    }
    if config.attack.fgsm_eps.is_empty() && config.attack.poison_rates.is_empty() {
        bail!("nothing to attack: set --fgsm-eps and/or --poison-rates");
    }
    let report = runner::run_experiment(&config, &base)?;
    emit_report(&report, ReportFormat::Json, &args.out)?;
    emit_report(&report, ReportFormat::Csv, &args.out)?;
    emit_timing(&report, &args.out)?;
    for line in &report.stage_errors {
        eprintln!("stage error: {line}");
    }
    println!("attack reports in {}", args.out.display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let a = checkpoint::load(&args.model_a)?;
    let base = args
        .model_a
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    std::fs::create_dir_all(&args.out)?;

    let b_ckpt = args.model_b.as_ref().map(|p| checkpoint::load(p)).transpose()?;
    let side_b = match (&b_ckpt, &args.dump_b) {
        (Some(b), None) => Some(analyze::RepSide::Model(b)),
        (None, Some(dir)) => Some(analyze::RepSide::Dump(dir)),
        (None, None) => None,
        _ => bail!("pass at most one of --model-b / --dump-b"),
    };

    if let Some(side) = side_b {
        let matrix = analyze::cross_cka(&a, &side, &base, args.cka_batch, args.max_examples)
            .context("cross-model CKA")?;
        let path = args.out.join("analyze_cka.csv");
        std::fs::write(&path, analyze::matrix_csv(&matrix))?;
        println!("cross CKA matrix written to {}", path.display());
        for row in &matrix {
            println!(
                "  {}",
                row.iter()
                    .map(|v| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    }

    if args.fisher {
        let profile = analyze::checkpoint_fisher(&a, &base, args.upto_t, args.fisher_samples, 0)
            .context("fisher profile")?;
        let mut csv = String::from("layer,group,value\n");
        for g in &profile.groups {
            let kind = match g.kind {
                spikebench_core::analysis::WeightGroupKind::Linear => "linear",
                spikebench_core::analysis::WeightGroupKind::Recurrent => "recurrent",
            };
            use std::fmt::Write as _;
            let _ = writeln!(csv, "{},{},{}", g.layer, kind, g.value);
        }
        let path = args.out.join("analyze_fisher_a.csv");
        std::fs::write(&path, csv)?;
        println!("fisher profile written to {}", path.display());
    }
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let method = match args.method.as_str() {
        "bptt" => Method::Bptt,
        "eprop" => Method::Eprop,
        "decolle" => Method::Decolle,
        other => bail!("unknown method '{other}' (expected bptt | eprop | decolle)"),
    };
    let table = probe::complexity_probe(method, &args.t, &args.sizes, args.rec)?;
    probe::print_table(&table);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join(format!("probe_{method}.csv"));
        std::fs::write(&path, probe::probe_csv(&table))?;
        println!("probe CSV written to {}", path.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let report = report::load_report(&args.in_dir.join("aggregate.json"))?;
    let out = args.out.unwrap_or_else(|| args.in_dir.clone());
    emit_report(&report, ReportFormat::Csv, &out)?;
    emit_report(&report, ReportFormat::Json, &out)?;
    println!("report files regenerated in {}", out.display());
    Ok(())
}
