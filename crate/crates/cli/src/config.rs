//! Experiment configuration: one flat TOML document per run, with
//! `key=value` overrides applied on top.

use std::path::{Path, PathBuf};

use ccnn::ccnn::{BlockStyle, Domain, ModelConfig};
use ccnn::ckconv::ConvBackend;
use ccnn::optim::OptimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Sequential MNIST from IDX files.
    Smnist,
    /// Synthetic multi-tone sequences.
    Waveforms,
    /// Synthetic 3-D shapes.
    Shapes,
}

/// How shape clouds are fed to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Voxels,
    Points,
}

impl std::str::FromStr for Representation {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "voxels" => Ok(Representation::Voxels),
            "points" => Ok(Representation::Points),
            _ => Err(CliError::Config(format!("unknown representation {s:?} (expected voxels or points)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// `ccnn_4_140` or `ccnn_6_380`; overrides `blocks` and `hidden`.
    pub preset: Option<String>,
    pub blocks: usize,
    pub hidden: usize,
    pub kernel_hidden: usize,
    pub kernel_layers: usize,
    pub w0: f64,
    pub dropout: f64,
    pub block_style: BlockStyle,
    pub mask: bool,
    pub causal: bool,
    pub final_norm: bool,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub kernel_l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: f64,
    pub backend: ConvBackend,
    pub seed: u64,
    pub threads: usize,

    // smnist
    pub data_dir: PathBuf,
    /// Cap on training images read (validation is carved out of these).
    pub train_size: usize,
    pub val_size: usize,
    pub pool: usize,
    pub permuted: bool,

    // synthetic tasks
    pub length: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,

    // shapes
    pub points: usize,
    pub grid_n: usize,
    pub voxel_budget: usize,
    /// Odd voxel window of the neighborhood convolutions.
    pub window: usize,
    pub representation: Representation,
    /// Point pairs kept out to this multiple of the kernel radius; defaults
    /// to the extent a voxel window bins, `window / (window − 1)`.
    pub point_reach: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Waveforms,
            preset: None,
            blocks: 2,
            hidden: 32,
            kernel_hidden: 32,
            kernel_layers: 3,
            w0: 100.0,
            dropout: 0.0,
            block_style: BlockStyle::Ccnn,
            mask: false,
            causal: false,
            final_norm: false,
            learning_rate: 0.01,
            weight_decay: 0.0,
            kernel_l2: 0.0,
            batch_size: 32,
            epochs: 10,
            warmup_epochs: 1.0,
            backend: ConvBackend::Auto,
            seed: 0,
            threads: 1,
            data_dir: PathBuf::from("data/mnist"),
            train_size: 10_000,
            val_size: 500,
            pool: 2,
            permuted: false,
            length: 256,
            classes: 10,
            n_train: 1000,
            n_val: 200,
            n_test: 500,
            points: 256,
            grid_n: 16,
            voxel_budget: 512,
            window: 3,
            representation: Representation::Voxels,
            point_reach: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, sets: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))?;
            table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.check_preset()?;
        let bad = |m: String| Err(CliError::Config(m));
        if self.batch_size == 0 || self.threads == 0 {
            return bad("batch_size and threads must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.w0 <= 0.0 {
            return bad(format!("w0 must be positive, got {}", self.w0));
        }
        match self.task {
            Task::Smnist => {
                if self.pool == 0 || 28 % self.pool != 0 {
                    return bad(format!("pool must divide 28, got {}", self.pool));
                }
                if self.val_size >= self.train_size {
                    return bad("val_size must be smaller than train_size".into());
                }
            }
            Task::Waveforms => {
                if self.length < 2 || self.classes < 2 {
                    return bad("waveforms need length >= 2 and classes >= 2".into());
                }
            }
            Task::Shapes => {
                if self.window % 2 == 0 || self.window < 3 || self.grid_n < 2 {
                    return bad(format!("window must be odd and >= 3, got {}", self.window));
                }
                if self.points < 32 {
                    return bad("points must be >= 32".into());
                }
                if self.point_reach.is_some_and(|r| !(r >= 1.0)) {
                    return bad("point_reach must be >= 1".into());
                }
            }
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_val == 0 || self.val_size == 0 {
            return bad("dataset sizes must be >= 1".into());
        }
        self.optim().validate()?;
        self.model(1).validate()?;
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            base_lr: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs.min(self.epochs as f64),
            total_epochs: self.epochs as f64,
            kernel_l2: self.kernel_l2,
            ..OptimConfig::default()
        }
    }

    /// Model for this task; `n_classes` comes from the dataset.
    pub fn model(&self, n_classes: usize) -> ModelConfig {
        let (dim, in_ch, domain) = match self.task {
            Task::Smnist => (1, 1, Domain::Grid { extent: vec![(28 / self.pool.max(1)).pow(2)] }),
            Task::Waveforms => (1, 1, Domain::Grid { extent: vec![self.length] }),
            Task::Shapes => (3, 3, Domain::Neighbors { support: self.window.pow(3) }),
        };
        let (blocks, hidden) = match self.preset.as_deref() {
            Some("ccnn_4_140") => (4, 140),
            Some("ccnn_6_380") => (6, 380),
            _ => (self.blocks, self.hidden),
        };
        ModelConfig {
            kernel_hidden: self.kernel_hidden,
            kernel_layers: self.kernel_layers,
            omega_0: self.w0,
            dropout: self.dropout,
            style: self.block_style,
            causal: self.causal,
            mask: self.mask,
            final_norm: self.final_norm,
            ..ModelConfig::new(dim, in_ch, n_classes, hidden, blocks, domain)
        }
    }

    /// Checks the preset name without building anything.
    pub fn check_preset(&self) -> CliResult<()> {
        match self.preset.as_deref() {
            None | Some("ccnn_4_140") | Some("ccnn_6_380") => Ok(()),
            Some(p) => Err(CliError::Config(format!("unknown preset {p:?} (expected ccnn_4_140 or ccnn_6_380)"))),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// TOML scalar or array when it parses as one, otherwise a bare string.
fn parse_value(v: &str) -> toml::Value {
    format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()))
}
