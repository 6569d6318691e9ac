//! Experiment orchestration: dataset construction, per-seed training with
//! each learning rule, evaluation, analyses and attack campaigns, aggregated
//! into a report. Seeds run concurrently; each seed's work is pure given its
//! RNG streams, so reruns are bit-identical.

use crate::config::{ExperimentConfig, Method, TaskConfig};
use crate::report::{
    BackdoorRow, EpochRow, ExperimentReport, FgsmRow, SeedReport,
};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use spikebench_core::analysis::{
    fisher_trace, layer_representations, CkaAccumulator, GradSource, RepresentationSource, YMode,
};
use spikebench_core::attacks::{
    attack_success_rate, build_ann_counterpart, fgsm_perturb, fgsm_perturb_model, FgsmConfig,
    PoisonPlan, TriggerSpec,
};
use spikebench_core::data::{
    encode_poisson, load_event_manifest, load_idx_images, load_idx_labels, synth_pattern_dataset,
    Dataset, SynthSpec,
};
use spikebench_core::learn::decolle::{
    decolle_predict, decolle_sequence_deltas, train_epoch_decolle, DecolleReadouts,
};
use spikebench_core::learn::eprop::{
    eprop_run, train_epoch_eprop, FeedbackMatrices, FeedbackMode,
};
use spikebench_core::learn::{argmax, bptt, Optimizer};
use spikebench_core::snn::{forward, init_network, Network};
use spikebench_core::tensor::SpikeTensor;
use std::path::Path;
use std::time::Instant;

/// Sub-seed streams derived from one experiment seed, so the dataset order,
/// initialization, feedback matrices and readouts each get independent
/// deterministic randomness.
mod stream {
    pub const INIT: u64 = 0x01;
    pub const FEEDBACK: u64 = 0x02;
    pub const READOUTS: u64 = 0x03;
    pub const FISHER: u64 = 0x04;
    pub const POISON: u64 = 0x05;

    pub fn derive(seed: u64, stream: u64) -> u64 {
        // splitmix-style mixing keeps streams decorrelated
        let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Train/test datasets for a task.
pub fn build_datasets(task: &TaskConfig, base: &Path) -> Result<(Dataset<f64>, Dataset<f64>)> {
    match task {
        TaskConfig::Synth {
            classes,
            train_per_class,
            test_per_class,
            t_steps,
            channels,
            jitter,
            density,
            seed,
        } => {
            let train = synth_pattern_dataset::<f64>(&SynthSpec {
                classes: *classes,
                n_per_class: *train_per_class,
                t_steps: *t_steps,
                channels: *channels,
                jitter: *jitter,
                density: *density,
                seed: *seed,
            })?;
            // same templates, different jitter stream
            let test = synth_pattern_dataset::<f64>(&SynthSpec {
                classes: *classes,
                n_per_class: *test_per_class,
                t_steps: *t_steps,
                channels: *channels,
                jitter: *jitter,
                density: *density,
                seed: seed.wrapping_add(0x5eed),
            })?;
            Ok((train, test))
        }
        TaskConfig::Events {
            manifest_train,
            manifest_test,
        } => {
            let train = load_event_manifest::<f64>(&base.join(manifest_train))?;
            let test = load_event_manifest::<f64>(&base.join(manifest_test))?;
            Ok((train, test))
        }
        TaskConfig::Idx {
            images_train,
            labels_train,
            images_test,
            labels_test,
            t_steps,
            classes,
            max_rate,
            seed,
        } => {
            let load_split = |images: &str, labels: &str, split_seed: u64| -> Result<Dataset<f64>> {
                let images = load_idx_images::<f64>(&base.join(images))?;
                let labels = load_idx_labels(&base.join(labels))?;
                if images.images.len() != labels.len() {
                    bail!(
                        "IDX image/label count mismatch: {} vs {}",
                        images.images.len(),
                        labels.len()
                    );
                }
                let samples = images
                    .images
                    .iter()
                    .zip(labels.iter())
                    .enumerate()
                    .map(|(i, (img, &label))| {
                        let tensor = encode_poisson(
                            img.view(),
                            *t_steps,
                            *max_rate,
                            split_seed.wrapping_add(i as u64),
                        )?;
                        Ok((tensor, label as usize))
                    })
                    .collect::<spikebench_core::Result<Vec<_>>>()?;
                Ok(Dataset::new(samples, *classes)?)
            };
            Ok((
                load_split(images_train, labels_train, *seed)?,
                load_split(images_test, labels_test, seed.wrapping_add(0x7e57))?,
            ))
        }
    }
}

/// A trained model plus the method's fixed auxiliary matrices.
pub struct TrainedModel {
    pub net: Network<f64>,
    pub feedback: Option<FeedbackMatrices<f64>>,
    pub readouts: Option<DecolleReadouts<f64>>,
    pub epochs: Vec<EpochRow>,
}

/// Trains one network from scratch for the configured number of epochs.
pub fn train_model(
    config: &ExperimentConfig,
    train_data: &Dataset<f64>,
    seed: u64,
) -> Result<TrainedModel> {
    let net_config = config.network_config(train_data.channels(), train_data.n_classes());
    let mut net = init_network(&net_config, stream::derive(seed, stream::INIT))
        .map_err(|e| anyhow!("network init: {e}"))?;
    let loss = config.loss_spec();
    let mut epochs = Vec::with_capacity(config.train.epochs);

    match config.model.method {
        Method::Bptt => {
            let mut opt = Optimizer::new(config.optimizer_spec());
            for epoch in 0..config.train.epochs {
                let stats = bptt::train_epoch_bptt(
                    &mut net,
                    train_data,
                    &loss,
                    &mut opt,
                    config.train.batch_size,
                    epoch_seed(seed, epoch),
                )?;
                epochs.push(EpochRow {
                    epoch,
                    mean_loss: stats.mean_loss,
                    train_accuracy: stats.accuracy,
                });
            }
            Ok(TrainedModel {
                net,
                feedback: None,
                readouts: None,
                epochs,
            })
        }
        Method::Eprop => {
            let feedback = match config.train.feedback {
                FeedbackMode::RandomFixed => {
                    FeedbackMatrices::random_fixed(&net, stream::derive(seed, stream::FEEDBACK))
                }
                FeedbackMode::Symmetric => FeedbackMatrices::symmetric(&net),
            };
            let mut opt = Optimizer::new(config.optimizer_spec());
            for epoch in 0..config.train.epochs {
                let stats = train_epoch_eprop(
                    &mut net,
                    train_data,
                    &feedback,
                    &loss,
                    &mut opt,
                    config.train.batch_size,
                    epoch_seed(seed, epoch),
                    config.train.error_mode,
                )?;
                epochs.push(EpochRow {
                    epoch,
                    mean_loss: stats.mean_loss,
                    train_accuracy: stats.accuracy,
                });
            }
            Ok(TrainedModel {
                net,
                feedback: Some(feedback),
                readouts: None,
                epochs,
            })
        }
        Method::Decolle => {
            let readouts = DecolleReadouts::new_random(
                &net,
                train_data.n_classes(),
                stream::derive(seed, stream::READOUTS),
            );
            for epoch in 0..config.train.epochs {
                let stats = train_epoch_decolle(
                    &mut net,
                    train_data,
                    &readouts,
                    &loss,
                    config.train.learning_rate,
                    config.train.cadence,
                    config.train.batch_size,
                    epoch_seed(seed, epoch),
                )?;
                epochs.push(EpochRow {
                    epoch,
                    mean_loss: stats.mean_loss,
                    train_accuracy: stats.accuracy,
                });
            }
            Ok(TrainedModel {
                net,
                feedback: None,
                readouts: Some(readouts),
                epochs,
            })
        }
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    stream::derive(seed, 0x100 + epoch as u64)
}

/// Class prediction respecting the method's readout path.
pub fn predict(model: &TrainedModel, input: &SpikeTensor<f64>) -> spikebench_core::Result<usize> {
    match &model.readouts {
        Some(readouts) => Ok(argmax(&decolle_predict(&model.net, readouts, input)?)),
        None => Ok(argmax(&forward(&model.net, input, false)?.0)),
    }
}

pub fn test_accuracy(model: &TrainedModel, data: &Dataset<f64>) -> Result<f64> {
    let mut correct = 0usize;
    for (tensor, label) in data.samples() {
        if predict(model, tensor)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Learning-state units the rule holds during one gradient pass, measured
/// from the actually allocated structures.
pub fn learning_state_units(
    config: &ExperimentConfig,
    model: &TrainedModel,
    sample: &SpikeTensor<f64>,
) -> Result<usize> {
    let loss = config.loss_spec();
    match config.model.method {
        Method::Bptt => Ok(bptt::bptt_run(
            &model.net,
            sample,
            0,
            &loss,
            spikebench_core::snn::SpikeMode::Hard,
            false,
        )?
        .trace_units),
        Method::Eprop => {
            let fb = model
                .feedback
                .clone()
                .unwrap_or_else(|| FeedbackMatrices::symmetric(&model.net));
            Ok(eprop_run(&model.net, sample, 0, &fb, &loss, config.train.error_mode)?.state_units)
        }
        Method::Decolle => {
            let readouts = model
                .readouts
                .as_ref()
                .ok_or_else(|| anyhow!("decolle model without readouts"))?;
            Ok(decolle_sequence_deltas(&model.net, sample, 0, readouts, &loss, 1e-9)?.state_units)
        }
    }
}

/// Layer-by-layer CKA similarity matrix of one network on a dataset,
/// accumulated with the unbiased minibatch estimator.
pub fn within_network_cka(
    net: &Network<f64>,
    data: &Dataset<f64>,
    batch: usize,
    max_examples: usize,
) -> Result<Vec<Vec<f64>>> {
    let n_layers = net.n_layers();
    let total = data.len().min(max_examples);
    let mut accs = vec![vec![CkaAccumulator::<f64>::new(); n_layers]; n_layers];
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
        let reps = layer_representations(net, &refs, RepresentationSource::Spikes)?;
        for i in 0..n_layers {
            for j in 0..n_layers {
                accs[i][j].push(&reps[i], &reps[j])?;
            }
        }
        start = end;
    }
    accs.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|acc| acc.finalize().map_err(|e| anyhow!("cka: {e}")))
                .collect()
        })
        .collect()
}

fn fgsm_sweep(
    config: &ExperimentConfig,
    model: &TrainedModel,
    test: &Dataset<f64>,
) -> Result<Vec<FgsmRow>> {
    let mut rows = Vec::new();
    for &epsilon in &config.attack.fgsm_eps {
        let cfg = FgsmConfig::new(epsilon, config.attack.fgsm_mode);
        let mut correct = 0usize;
        // DECOLLE classifies through its readout: fold it into the
        // counterpart so the attack sees the full decision path.
        let counterpart = model.readouts.as_ref().map(|readouts| {
            build_ann_counterpart(&model.net)
                .with_output_map(readouts.per_layer.last().unwrap().g.clone())
        });
        for (tensor, label) in test.samples() {
            let adv = match &counterpart {
                Some(cp) => fgsm_perturb_model(cp, tensor, *label, &cfg)?,
                None => fgsm_perturb(&model.net, tensor, *label, &cfg)?,
            };
            if predict(model, &adv)? == *label {
                correct += 1;
            }
        }
        rows.push(FgsmRow {
            epsilon,
            accuracy: correct as f64 / test.len() as f64,
        });
    }
    Ok(rows)
}

/// One backdoor campaign: poison the training set, retrain from scratch,
/// evaluate ASR and clean accuracy. Averaged over `poison_draws` random
/// (source, target) pairs.
fn backdoor_sweep(
    config: &ExperimentConfig,
    train_data: &Dataset<f64>,
    test: &Dataset<f64>,
    seed: u64,
) -> Result<Vec<BackdoorRow>> {
    use rand::Rng;
    use rand::SeedableRng;
    let trigger = TriggerSpec::corner_block(config.attack.trigger_width);
    let mut rows = Vec::new();
    for &rate in &config.attack.poison_rates {
        let mut asr_sum = 0.0;
        let mut clean_sum = 0.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stream::derive(
            seed,
            stream::POISON ^ rate.to_bits(),
        ));
        for draw in 0..config.attack.poison_draws {
            let n_classes = train_data.n_classes();
            let source = rng.random_range(0..n_classes);
            let target = loop {
                let t = rng.random_range(0..n_classes);
                if t != source {
                    break t;
                }
            };
            let plan = PoisonPlan {
                source,
                target,
                rate,
                trigger,
                seed: stream::derive(seed, 0x200 + draw as u64),
            };
            let poisoned = poison_or_copy(train_data, &plan, rate)?;
            let model = train_model(config, &poisoned, seed)?;
            let (asr, clean) = attack_success_rate(|t| predict(&model, t), test, &plan)?;
            asr_sum += asr;
            clean_sum += clean;
        }
        let n = config.attack.poison_draws as f64;
        rows.push(BackdoorRow {
            rate,
            asr: asr_sum / n,
            clean_accuracy: clean_sum / n,
        });
    }
    Ok(rows)
}

fn poison_or_copy(
    data: &Dataset<f64>,
    plan: &PoisonPlan<f64>,
    rate: f64,
) -> Result<Dataset<f64>> {
    if rate == 0.0 {
        Ok(data.clone())
    } else {
        Ok(spikebench_core::attacks::poison_dataset(data, plan)?)
    }
}

fn run_seed(
    config: &ExperimentConfig,
    train_data: &Dataset<f64>,
    test_data: &Dataset<f64>,
    seed: u64,
    errors: &mut Vec<String>,
) -> Result<(SeedReport, TrainedModel, f64)> {
    let t0 = Instant::now();
    let model = train_model(config, train_data, seed).context("training stage")?;
    let test_acc = test_accuracy(&model, test_data).context("evaluation stage")?;
    let units = learning_state_units(config, &model, &train_data.samples()[0].0)
        .context("memory probe stage")?;

    let cka_layer_matrix = if config.analysis.cka {
        match within_network_cka(
            &model.net,
            test_data,
            config.analysis.cka_batch,
            config.analysis.cka_max_examples,
        ) {
            Ok(m) => Some(m),
            Err(e) => {
                errors.push(format!("cka stage (seed {seed}): {e}"));
                None
            }
        }
    } else {
        None
    };

    let fisher = if config.analysis.fisher {
        let grad_source = match config.model.method {
            Method::Bptt => GradSource::Bptt,
            Method::Eprop => GradSource::Eprop(model.feedback.as_ref().unwrap()),
            Method::Decolle => GradSource::Decolle(model.readouts.as_ref().unwrap()),
        };
        let subset = Dataset::new(
            test_data.samples()[..config.analysis.fisher_samples.min(test_data.len())].to_vec(),
            test_data.n_classes(),
        )?;
        match fisher_trace(
            &model.net,
            &subset,
            test_data.t_steps(),
            &grad_source,
            YMode::Sampled {
                seed: stream::derive(seed, stream::FISHER),
            },
            true,
        ) {
            Ok(p) => Some(p),
            Err(e) => {
                errors.push(format!("fisher stage (seed {seed}): {e}"));
                None
            }
        }
    } else {
        None
    };

    let fgsm = if config.attack.fgsm_eps.is_empty() {
        Vec::new()
    } else {
        fgsm_sweep(config, &model, test_data).context("fgsm stage")?
    };
    let backdoor = if config.attack.poison_rates.is_empty() {
        Vec::new()
    } else {
        backdoor_sweep(config, train_data, test_data, seed).context("backdoor stage")?
    };

    let wall = t0.elapsed().as_secs_f64();
    Ok((
        SeedReport {
            seed,
            epochs: model.epochs.clone(),
            test_accuracy: test_acc,
            learning_state_units: units,
            cka_layer_matrix,
            fisher,
            fgsm,
            backdoor,
        },
        model,
        wall,
    ))
}

/// Runs the full experiment: per-seed training, evaluation, analyses and
/// attacks, aggregated across seeds. Stage failures are recorded with their
/// stage name; completed seeds are preserved.
pub fn run_experiment(config: &ExperimentConfig, base: &Path) -> Result<ExperimentReport> {
    run_experiment_with_models(config, base).map(|(report, _)| report)
}

/// As [`run_experiment`] but also returns the trained models (for
/// checkpointing).
pub fn run_experiment_with_models(
    config: &ExperimentConfig,
    base: &Path,
) -> Result<(ExperimentReport, Vec<(u64, TrainedModel)>)> {
    config.validate()?;
    let (train_data, test_data) = build_datasets(&config.task, base).context("dataset stage")?;
    type SeedOutcome = (u64, Vec<String>, Result<(SeedReport, TrainedModel, f64)>);
    let results: Vec<SeedOutcome> = config
        .train
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut errors = Vec::new();
            let r = run_seed(config, &train_data, &test_data, seed, &mut errors);
            (seed, errors, r)
        })
        .collect();

    let mut per_seed = Vec::new();
    let mut models = Vec::new();
    let mut stage_errors = Vec::new();
    let mut wall_times = Vec::new();
    for (seed, soft_errors, result) in results {
        stage_errors.extend(soft_errors);
        match result {
            Ok((report, model, wall)) => {
                per_seed.push(report);
                models.push((seed, model));
                wall_times.push((seed, wall));
            }
            Err(e) => stage_errors.push(format!("seed {seed}: {e:#}")),
        }
    }
    let aggregate = ExperimentReport::aggregate_from_seeds(config, &per_seed);
    Ok((
        ExperimentReport {
            config: config.clone(),
            per_seed,
            aggregate,
            stage_errors,
            wall_time_secs: wall_times,
        },
        models,
    ))
}
