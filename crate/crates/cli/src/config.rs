//! Experiment configuration: TOML schema, validation, and the shipped
//! hyperparameter presets.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spikebench_core::learn::eprop::{ErrorMode, FeedbackMode};
use spikebench_core::learn::decolle::UpdateCadence;
use spikebench_core::learn::{LossKind, LossSpec, OptimizerSpec};
use spikebench_core::snn::{
    LayerSpec, LifParams, NetworkConfig, ReadoutMode, SurrogateKind, SurrogateSpec,
};
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bptt,
    Eprop,
    Decolle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Bptt => write!(f, "bptt"),
            Method::Eprop => write!(f, "eprop"),
            Method::Decolle => write!(f, "decolle"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Ff,
    Rec,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Ff => write!(f, "ff"),
            Architecture::Rec => write!(f, "rec"),
        }
    }
}

/// Dataset source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TaskConfig {
    /// Deterministic synthetic spike-pattern task.
    Synth {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        t_steps: usize,
        channels: usize,
        jitter: f64,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Event-CSV manifests (one manifest per split).
    Events {
        manifest_train: String,
        manifest_test: String,
    },
    /// IDX images rate-encoded into spike trains.
    Idx {
        images_train: String,
        labels_train: String,
        images_test: String,
        labels_test: String,
        t_steps: usize,
        classes: usize,
        #[serde(default = "default_max_rate")]
        max_rate: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_density() -> f64 {
    0.3
}

fn default_max_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub method: Method,
    pub architecture: Architecture,
    pub hidden: Vec<usize>,
    pub alpha_syn: f64,
    pub alpha_mem: f64,
    pub v_th: f64,
    #[serde(default = "default_surrogate")]
    pub surrogate: SurrogateKind,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default = "default_readout")]
    pub readout: ReadoutMode,
}

fn default_surrogate() -> SurrogateKind {
    SurrogateKind::FastSigmoid
}

fn default_slope() -> f64 {
    10.0
}

fn default_readout() -> ReadoutMode {
    ReadoutMode::MembraneSum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// e-prop feedback routing.
    #[serde(default = "default_feedback")]
    pub feedback: FeedbackMode,
    /// e-prop learning-signal timing.
    #[serde(default = "default_error_mode")]
    pub error_mode: ErrorMode,
    /// DECOLLE update cadence.
    #[serde(default = "default_cadence")]
    pub cadence: UpdateCadence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}

fn default_loss() -> LossKind {
    LossKind::SoftmaxCrossEntropy
}

fn default_feedback() -> FeedbackMode {
    FeedbackMode::RandomFixed
}

fn default_error_mode() -> ErrorMode {
    ErrorMode::PerStep
}

fn default_cadence() -> UpdateCadence {
    UpdateCadence::PerStep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub cka: bool,
    #[serde(default)]
    pub fisher: bool,
    #[serde(default = "default_cka_batch")]
    pub cka_batch: usize,
    #[serde(default = "default_cka_max")]
    pub cka_max_examples: usize,
    #[serde(default = "default_fisher_samples")]
    pub fisher_samples: usize,
}

fn default_cka_batch() -> usize {
    128
}

fn default_cka_max() -> usize {
    4096
}

fn default_fisher_samples() -> usize {
    64
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cka: false,
            fisher: false,
            cka_batch: default_cka_batch(),
            cka_max_examples: default_cka_max(),
            fisher_samples: default_fisher_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    #[serde(default)]
    pub fgsm_eps: Vec<f64>,
    #[serde(default = "default_fgsm_mode")]
    pub fgsm_mode: spikebench_core::attacks::FgsmMode,
    #[serde(default)]
    pub poison_rates: Vec<f64>,
    #[serde(default = "default_poison_draws")]
    pub poison_draws: usize,
    /// Row width of the flattened channel grid for the corner trigger.
    #[serde(default = "default_trigger_width")]
    pub trigger_width: usize,
}

fn default_fgsm_mode() -> spikebench_core::attacks::FgsmMode {
    spikebench_core::attacks::FgsmMode::AnnCounterpart
}

fn default_poison_draws() -> usize {
    5
}

fn default_trigger_width() -> usize {
    8
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            fgsm_eps: Vec::new(),
            fgsm_mode: default_fgsm_mode(),
            poison_rates: Vec::new(),
            poison_draws: default_poison_draws(),
            trigger_width: default_trigger_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).context("parsing experiment config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.hidden.is_empty() {
            bail!("model.hidden must name at least one hidden layer");
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            bail!("hidden layer sizes must be positive");
        }
        if !(0.0 < self.model.alpha_syn && self.model.alpha_syn <= 1.0)
            || !(0.0 < self.model.alpha_mem && self.model.alpha_mem <= 1.0)
        {
            bail!("decay factors must lie in (0, 1]");
        }
        if self.model.v_th <= 0.0 {
            bail!("v_th must be positive");
        }
        if self.train.batch_size == 0 {
            bail!("batch_size must be positive");
        }
        if self.train.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if let TaskConfig::Events {
            manifest_train,
            manifest_test,
        } = &self.task
        {
            if manifest_train.is_empty() || manifest_test.is_empty() {
                bail!(
                    "this preset needs dataset manifests: set task.manifest_train / \
                     task.manifest_test (see the event CSV format in the README)"
                );
            }
        }
        for rate in &self.attack.poison_rates {
            if !(0.0..=1.0).contains(rate) {
                bail!("poison rates must lie in [0, 1]");
            }
        }
        for eps in &self.attack.fgsm_eps {
            if *eps < 0.0 {
                bail!("fgsm epsilon must be non-negative");
            }
        }
        Ok(())
    }

    /// The DECOLLE classification path needs a spiking output layer; other
    /// methods keep whatever the config asked for.
    pub fn effective_readout(&self) -> ReadoutMode {
        match self.model.method {
            Method::Decolle => ReadoutMode::SpikeCount,
            _ => self.model.readout,
        }
    }

    /// Network layout for a given number of input channels and classes:
    /// hidden layers plus the output layer; recurrence on hidden layers only
    /// (the output layer never carries explicit recurrent weights).
    pub fn network_config(&self, input_size: usize, n_classes: usize) -> NetworkConfig<f64> {
        let recurrent = self.model.architecture == Architecture::Rec;
        let mut layers: Vec<LayerSpec> = self
            .model
            .hidden
            .iter()
            .map(|&size| LayerSpec {
                size,
                recurrent,
            })
            .collect();
        layers.push(LayerSpec::ff(n_classes));
        NetworkConfig {
            input_size,
            layers,
            lif: LifParams::new(self.model.alpha_syn, self.model.alpha_mem, self.model.v_th),
            surrogate: SurrogateSpec::new(self.model.surrogate, self.model.slope),
            readout_mode: self.effective_readout(),
        }
    }

    pub fn optimizer_spec(&self) -> OptimizerSpec {
        match self.train.optimizer {
            OptimizerKind::Sgd => OptimizerSpec::Sgd {
                lr: self.train.learning_rate,
            },
            OptimizerKind::Momentum => OptimizerSpec::Momentum {
                lr: self.train.learning_rate,
                beta: 0.9,
            },
            OptimizerKind::Adam => OptimizerSpec::adam(self.train.learning_rate),
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.train.loss,
        }
    }

    pub fn file_stem(&self, seed: u64) -> String {
        format!("{}_{}_{}", self.model.method, self.model.architecture, seed)
    }
}

/// Table-driven presets: the published hyperparameters per dataset, method
/// and architecture, plus desk-scale synthetic presets used by the
/// acceptance suite.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let builder = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, b)| b)
        .ok_or_else(|| {
            anyhow::anyhow!(
                "unknown preset '{name}'; available presets:\n  {}",
                preset_names().join("\n  ")
            )
        })?;
    let config = builder();
    config.validate().ok(); // placeholder dataset paths may fail; surfaced at run time
    Ok(config)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

type PresetBuilder = fn() -> ExperimentConfig;

struct Hyper {
    alpha_syn: f64,
    alpha_mem: f64,
    v_th: f64,
    lr: f64,
    bs: usize,
    epochs: usize,
}

fn published(
    name: &str,
    method: Method,
    architecture: Architecture,
    hidden: Vec<usize>,
    h: Hyper,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        task: TaskConfig::Events {
            manifest_train: String::new(),
            manifest_test: String::new(),
        },
        model: ModelConfig {
            method,
            architecture,
            hidden,
            alpha_syn: h.alpha_syn,
            alpha_mem: h.alpha_mem,
            v_th: h.v_th,
            surrogate: default_surrogate(),
            slope: default_slope(),
            readout: default_readout(),
        },
        train: TrainConfig {
            learning_rate: h.lr,
            batch_size: h.bs,
            epochs: h.epochs,
            seeds: default_seeds(),
            optimizer: default_optimizer(),
            loss: default_loss(),
            feedback: default_feedback(),
            error_mode: default_error_mode(),
            cadence: default_cadence(),
        },
        analysis: AnalysisConfig::default(),
        attack: AttackConfig::default(),
    }
}

fn synth_preset(name: &str, method: Method, architecture: Architecture) -> ExperimentConfig {
    let (lr, optimizer) = match method {
        Method::Bptt => (0.05, OptimizerKind::Sgd),
        Method::Eprop => (0.01, OptimizerKind::Sgd),
        Method::Decolle => (0.002, OptimizerKind::Sgd),
    };
    ExperimentConfig {
        name: name.to_string(),
        task: TaskConfig::Synth {
            classes: 2,
            train_per_class: 100,
            test_per_class: 50,
            t_steps: 20,
            channels: 64,
            jitter: 0.05,
            density: 0.3,
            seed: 7,
        },
        model: ModelConfig {
            method,
            architecture,
            hidden: vec![120, 84],
            alpha_syn: 0.9,
            alpha_mem: 0.5,
            v_th: 0.6,
            surrogate: default_surrogate(),
            slope: default_slope(),
            readout: default_readout(),
        },
        train: TrainConfig {
            learning_rate: lr,
            batch_size: 10,
            epochs: 50,
            seeds: default_seeds(),
            optimizer,
            loss: default_loss(),
            feedback: default_feedback(),
            error_mode: default_error_mode(),
            cadence: default_cadence(),
        },
        analysis: AnalysisConfig::default(),
        attack: AttackConfig {
            fgsm_eps: vec![0.001, 0.005, 0.01, 0.02, 0.05],
            trigger_width: 8,
            ..AttackConfig::default()
        },
    }
}

macro_rules! preset_fn {
    ($fname:ident, $name:expr, $m:expr, $a:expr, $hidden:expr, $hy:expr) => {
        fn $fname() -> ExperimentConfig {
            published($name, $m, $a, $hidden, $hy)
        }
    };
}

const NM: [usize; 2] = [120, 84];

preset_fn!(p_nm_bptt_ff, "nmnist-bptt-ff", Method::Bptt, Architecture::Ff, NM.to_vec(),
    Hyper { alpha_syn: 0.9, alpha_mem: 0.5, v_th: 0.9, lr: 1e-4, bs: 16, epochs: 100 });
preset_fn!(p_nm_eprop_ff, "nmnist-eprop-ff", Method::Eprop, Architecture::Ff, NM.to_vec(),
    Hyper { alpha_syn: 0.99, alpha_mem: 0.95, v_th: 0.2, lr: 5e-3, bs: 5, epochs: 100 });
preset_fn!(p_nm_dec_ff, "nmnist-decolle-ff", Method::Decolle, Architecture::Ff, NM.to_vec(),
    Hyper { alpha_syn: 0.97, alpha_mem: 0.92, v_th: 1.0, lr: 1e-3, bs: 72, epochs: 100 });
preset_fn!(p_nm_bptt_rec, "nmnist-bptt-rec", Method::Bptt, Architecture::Rec, NM.to_vec(),
    Hyper { alpha_syn: 0.9, alpha_mem: 0.5, v_th: 0.9, lr: 1e-2, bs: 256, epochs: 100 });
preset_fn!(p_nm_eprop_rec, "nmnist-eprop-rec", Method::Eprop, Architecture::Rec, NM.to_vec(),
    Hyper { alpha_syn: 0.99, alpha_mem: 0.95, v_th: 0.2, lr: 5e-3, bs: 4, epochs: 100 });
preset_fn!(p_nm_dec_rec, "nmnist-decolle-rec", Method::Decolle, Architecture::Rec, NM.to_vec(),
    Hyper { alpha_syn: 0.97, alpha_mem: 0.92, v_th: 1.0, lr: 1e-5, bs: 72, epochs: 100 });

preset_fn!(p_dvs_bptt_ff, "dvs-bptt-ff", Method::Bptt, Architecture::Ff, vec![512],
    Hyper { alpha_syn: 0.9, alpha_mem: 0.5, v_th: 1.0, lr: 1e-3, bs: 16, epochs: 100 });
preset_fn!(p_dvs_eprop_ff, "dvs-eprop-ff", Method::Eprop, Architecture::Ff, vec![512],
    Hyper { alpha_syn: 0.95, alpha_mem: 0.65, v_th: 0.3, lr: 1e-3, bs: 15, epochs: 100 });
preset_fn!(p_dvs_dec_ff, "dvs-decolle-ff", Method::Decolle, Architecture::Ff, vec![512],
    Hyper { alpha_syn: 0.9, alpha_mem: 0.65, v_th: 0.9, lr: 2e-4, bs: 72, epochs: 100 });
preset_fn!(p_dvs_bptt_rec, "dvs-bptt-rec", Method::Bptt, Architecture::Rec, vec![512],
    Hyper { alpha_syn: 0.95, alpha_mem: 0.5, v_th: 0.9, lr: 1e-3, bs: 32, epochs: 100 });
preset_fn!(p_dvs_eprop_rec, "dvs-eprop-rec", Method::Eprop, Architecture::Rec, vec![512],
    Hyper { alpha_syn: 0.95, alpha_mem: 0.6, v_th: 0.7, lr: 3e-3, bs: 15, epochs: 100 });
preset_fn!(p_dvs_dec_rec, "dvs-decolle-rec", Method::Decolle, Architecture::Rec, vec![512],
    Hyper { alpha_syn: 0.05, alpha_mem: 0.2, v_th: 1.0, lr: 3e-5, bs: 72, epochs: 100 });

preset_fn!(p_ti_bptt_ff, "timit-bptt-ff", Method::Bptt, Architecture::Ff, vec![400],
    Hyper { alpha_syn: 0.9, alpha_mem: 0.5, v_th: 1.0, lr: 1e-3, bs: 8, epochs: 100 });
preset_fn!(p_ti_eprop_ff, "timit-eprop-ff", Method::Eprop, Architecture::Ff, vec![400],
    Hyper { alpha_syn: 0.99, alpha_mem: 0.3, v_th: 1.0, lr: 5e-4, bs: 4, epochs: 100 });
preset_fn!(p_ti_dec_ff, "timit-decolle-ff", Method::Decolle, Architecture::Ff, vec![400],
    Hyper { alpha_syn: 0.97, alpha_mem: 0.9, v_th: 0.9, lr: 2e-4, bs: 128, epochs: 100 });
preset_fn!(p_ti_bptt_rec, "timit-bptt-rec", Method::Bptt, Architecture::Rec, vec![400],
    Hyper { alpha_syn: 0.9, alpha_mem: 0.7, v_th: 1.0, lr: 1e-3, bs: 8, epochs: 100 });
preset_fn!(p_ti_eprop_rec, "timit-eprop-rec", Method::Eprop, Architecture::Rec, vec![400],
    Hyper { alpha_syn: 0.99, alpha_mem: 0.3, v_th: 1.0, lr: 5e-4, bs: 4, epochs: 100 });
preset_fn!(p_ti_dec_rec, "timit-decolle-rec", Method::Decolle, Architecture::Rec, vec![400],
    Hyper { alpha_syn: 0.97, alpha_mem: 0.3, v_th: 1.0, lr: 1e-5, bs: 32, epochs: 100 });

fn p_synth_bptt_ff() -> ExperimentConfig {
    synth_preset("synth-bptt-ff", Method::Bptt, Architecture::Ff)
}
fn p_synth_bptt_rec() -> ExperimentConfig {
    synth_preset("synth-bptt-rec", Method::Bptt, Architecture::Rec)
}
fn p_synth_eprop_ff() -> ExperimentConfig {
    synth_preset("synth-eprop-ff", Method::Eprop, Architecture::Ff)
}
fn p_synth_eprop_rec() -> ExperimentConfig {
    synth_preset("synth-eprop-rec", Method::Eprop, Architecture::Rec)
}
fn p_synth_dec_ff() -> ExperimentConfig {
    synth_preset("synth-decolle-ff", Method::Decolle, Architecture::Ff)
}
fn p_synth_dec_rec() -> ExperimentConfig {
    synth_preset("synth-decolle-rec", Method::Decolle, Architecture::Rec)
}

const PRESETS: &[(&str, PresetBuilder)] = &[
    ("nmnist-bptt-ff", p_nm_bptt_ff),
    ("nmnist-eprop-ff", p_nm_eprop_ff),
    ("nmnist-decolle-ff", p_nm_dec_ff),
    ("nmnist-bptt-rec", p_nm_bptt_rec),
    ("nmnist-eprop-rec", p_nm_eprop_rec),
    ("nmnist-decolle-rec", p_nm_dec_rec),
    ("dvs-bptt-ff", p_dvs_bptt_ff),
    ("dvs-eprop-ff", p_dvs_eprop_ff),
    ("dvs-decolle-ff", p_dvs_dec_ff),
    ("dvs-bptt-rec", p_dvs_bptt_rec),
    ("dvs-eprop-rec", p_dvs_eprop_rec),
    ("dvs-decolle-rec", p_dvs_dec_rec),
    ("timit-bptt-ff", p_ti_bptt_ff),
    ("timit-eprop-ff", p_ti_eprop_ff),
    ("timit-decolle-ff", p_ti_dec_ff),
    ("timit-bptt-rec", p_ti_bptt_rec),
    ("timit-eprop-rec", p_ti_eprop_rec),
    ("timit-decolle-rec", p_ti_dec_rec),
    ("synth-bptt-ff", p_synth_bptt_ff),
    ("synth-bptt-rec", p_synth_bptt_rec),
    ("synth-eprop-ff", p_synth_eprop_ff),
    ("synth-eprop-rec", p_synth_eprop_rec),
    ("synth-decolle-ff", p_synth_dec_ff),
    ("synth-decolle-rec", p_synth_dec_rec),
];
