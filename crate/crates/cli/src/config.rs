//! File configuration, flag overrides and the manifest written next to every
//! set of outputs.

use std::fs;
use std::path::{Path, PathBuf};

use astra_core::losses::LossVariant;
use astra_core::{CvConfig, LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Everything that determines a command's outputs. Written back out as
/// `manifest.toml`, which can be passed to `--config` to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Command that produced the manifest; informational.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Explicit validation file for `train`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    /// Explicit test file for `train`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Base seed for sampling, fold plans and initial weights.
    pub seed: u64,
    /// Fold count of the internal split `train` uses without a `val` file.
    pub split_folds: usize,
    pub repeats: usize,
    pub folds: usize,
    pub methods: Vec<LossKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_positives: Option<usize>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cv = CvConfig::default();
        RunConfig {
            command: None,
            dataset: None,
            val: None,
            test: None,
            seed: 0,
            split_folds: 5,
            repeats: cv.repeats,
            folds: cv.k,
            methods: cv.methods,
            keep_positives: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            Failure::config(format!("config {}: {msg}", path.display()))
        })
    }

    pub fn to_manifest(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::config(format!("cannot serialise manifest: {e}")))
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            repeats: self.repeats,
            k: self.folds,
            methods: self.methods.clone(),
            keep_positives: self.keep_positives,
            base_seed: self.seed,
            train: self.train.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossArg {
    Bce,
    Gmn,
}

impl From<LossArg> for LossVariant {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bce => LossVariant::Bce,
            LossArg::Gmn => LossVariant::Gmn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

/// Flags shared by all commands. Any flag given overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML config file; a previously written manifest.toml works too.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Input dataset (sparse `label idx:val ...` format, or CSV with a `.csv` extension).
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub keep_positives: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

/// Training flags used by `train` and `cv`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainFlags {
    /// Loss family; for `cv` this filters the method list.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Asymmetric output unit; for `cv` this filters the method list.
    #[arg(long, value_enum)]
    pub astra: Option<Switch>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Adam learning rate for the weights.
    #[arg(long, value_name = "RATE")]
    pub eta: Option<f64>,
    /// Hidden units (default ceil((features + 1) / 2)).
    #[arg(long, value_name = "N")]
    pub hidden: Option<usize>,
}

pub fn resolve(common: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = common.keep_positives {
        cfg.keep_positives = Some(k);
    }
    Ok(cfg)
}

pub fn apply_train_flags(cfg: &mut RunConfig, flags: &TrainFlags) {
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(e) = flags.eta {
        cfg.train.eta = e;
    }
    if let Some(h) = flags.hidden {
        cfg.train.hidden = Some(h);
    }
}
