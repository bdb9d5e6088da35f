//! The sectioned `key=value` experiment configuration shared by every CLI
//! command.
//!
//! Grammar: lines are either `[section]` headers, `key=value` pairs, blank,
//! or `#` comments. Sections are `[data]`, `[model]`, `[train]`, and
//! `[analyze]`; every key has a default, so an empty file parses to the
//! default configuration. Unknown sections, unknown keys, duplicate keys,
//! and malformed values are hard errors carrying the line number.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{HeadKind, LinearInit, ModelConfig, PredictorKind};
use crate::synthgen::DataConfig;
use crate::training::TrainConfig;

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub seqs_per_regime: u32,
    pub global_seed: u64,
    pub context_len: usize,
    pub delta: usize,
    pub master_len: usize,
    pub out_dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            seqs_per_regime: 500,
            global_seed: 42,
            context_len: 768,
            delta: 256,
            master_len: 1024,
            out_dir: PathBuf::from("runs/data"),
        }
    }
}

/// Model architecture choices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    /// Latent width; regime-indicator theory needs at least 18 here for
    /// full-table runs.
    pub latent_dim: usize,
    pub predictor: PredictorChoice,
    /// Initialization of the linear predictor; ignored for the MLP.
    pub predictor_init: LinearInit,
    pub head: HeadKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: 32,
            predictor: PredictorChoice::Linear,
            predictor_init: LinearInit::Identity,
            head: HeadKind::TwoLayer,
        }
    }
}

/// Which predictor family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorChoice {
    Linear,
    Mlp,
}

/// Optimization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub epochs: u32,
    pub batch: usize,
    pub lr: f64,
    pub ema_alpha: f64,
    pub seed: u64,
    pub eval_every: u32,
    /// Global gradient-norm cap; zero disables clipping.
    pub clip_grad_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch: 256,
            lr: 1e-3,
            ema_alpha: 0.996,
            seed: 42,
            eval_every: 1,
            clip_grad_norm: 0.0,
        }
    }
}

/// Clustering parameters for the analysis stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSection {
    pub kmeans_restarts: u32,
    pub kmeans_seed: u64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { kmeans_restarts: 10, kmeans_seed: 0 }
    }
}

/// The full resolved configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub analyze: AnalyzeSection,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Parses the sectioned grammar, filling every omitted key with its
    /// default.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut section: Option<String> = None;
        let mut seen: Vec<String> = Vec::new();

        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: String| Error::config(format!("line {line_no}: {what}"));

            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| bad(format!("unterminated section header {line:?}")))?;
                if !matches!(name, "data" | "model" | "train" | "analyze") {
                    return Err(bad(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }

            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let section = section
                .as_deref()
                .ok_or_else(|| bad(format!("key {key} appears before any [section]")))?;
            let qualified = format!("{section}.{key}");
            if seen.contains(&qualified) {
                return Err(bad(format!("duplicate key {qualified}")));
            }
            seen.push(qualified.clone());

            config
                .apply(section, key, value)
                .map_err(|e| bad(format!("{qualified}: {e}")))?;
        }

        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("{value:?} is not a valid {what}")))
        }
        match (section, key) {
            ("data", "seqs_per_regime") => {
                self.data.seqs_per_regime = parse(value, "u32")?;
            }
            ("data", "global_seed") => self.data.global_seed = parse(value, "u64")?,
            ("data", "context_len") => self.data.context_len = parse(value, "usize")?,
            ("data", "delta") => self.data.delta = parse(value, "usize")?,
            ("data", "master_len") => self.data.master_len = parse(value, "usize")?,
            ("data", "out_dir") => self.data.out_dir = PathBuf::from(value),
            ("model", "latent_dim") => self.model.latent_dim = parse(value, "usize")?,
            ("model", "predictor") => {
                self.model.predictor = match value {
                    "linear" => PredictorChoice::Linear,
                    "mlp" => PredictorChoice::Mlp,
                    other => {
                        return Err(Error::config(format!(
                            "unknown predictor {other:?} (expected linear or mlp)"
                        )))
                    }
                };
            }
            ("model", "predictor_init") => {
                self.model.predictor_init = match value {
                    "identity" => LinearInit::Identity,
                    "random" => LinearInit::Random,
                    other => {
                        return Err(Error::config(format!(
                            "unknown predictor_init {other:?} (expected identity or random)"
                        )))
                    }
                };
            }
            ("model", "head") => self.model.head = value.parse()?,
            ("train", "epochs") => self.train.epochs = parse(value, "u32")?,
            ("train", "batch") => self.train.batch = parse(value, "usize")?,
            ("train", "lr") => self.train.lr = parse(value, "f64")?,
            ("train", "ema_alpha") => self.train.ema_alpha = parse(value, "f64")?,
            ("train", "seed") => self.train.seed = parse(value, "u64")?,
            ("train", "eval_every") => self.train.eval_every = parse(value, "u32")?,
            ("train", "clip_grad_norm") => {
                self.train.clip_grad_norm = parse(value, "f64")?;
            }
            ("analyze", "kmeans_restarts") => {
                self.analyze.kmeans_restarts = parse(value, "u32")?;
            }
            ("analyze", "kmeans_seed") => self.analyze.kmeans_seed = parse(value, "u64")?,
            (section, key) => {
                return Err(Error::config(format!("unknown key {key} in section [{section}]")))
            }
        }
        Ok(())
    }

    /// Renders the resolved configuration; the output re-parses to an
    /// identical value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[data]");
        let _ = writeln!(out, "seqs_per_regime={}", self.data.seqs_per_regime);
        let _ = writeln!(out, "global_seed={}", self.data.global_seed);
        let _ = writeln!(out, "context_len={}", self.data.context_len);
        let _ = writeln!(out, "delta={}", self.data.delta);
        let _ = writeln!(out, "master_len={}", self.data.master_len);
        let _ = writeln!(out, "out_dir={}", self.data.out_dir.display());
        let _ = writeln!(out, "\n[model]");
        let _ = writeln!(out, "latent_dim={}", self.model.latent_dim);
        let _ = writeln!(
            out,
            "predictor={}",
            match self.model.predictor {
                PredictorChoice::Linear => "linear",
                PredictorChoice::Mlp => "mlp",
            }
        );
        let _ = writeln!(
            out,
            "predictor_init={}",
            match self.model.predictor_init {
                LinearInit::Identity => "identity",
                LinearInit::Random => "random",
            }
        );
        let _ = writeln!(out, "head={}", self.model.head.label());
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(out, "epochs={}", self.train.epochs);
        let _ = writeln!(out, "batch={}", self.train.batch);
        let _ = writeln!(out, "lr={}", self.train.lr);
        let _ = writeln!(out, "ema_alpha={}", self.train.ema_alpha);
        let _ = writeln!(out, "seed={}", self.train.seed);
        let _ = writeln!(out, "eval_every={}", self.train.eval_every);
        let _ = writeln!(out, "clip_grad_norm={}", self.train.clip_grad_norm);
        let _ = writeln!(out, "\n[analyze]");
        let _ = writeln!(out, "kmeans_restarts={}", self.analyze.kmeans_restarts);
        let _ = writeln!(out, "kmeans_seed={}", self.analyze.kmeans_seed);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.seqs_per_regime == 0 {
            return Err(Error::config("seqs_per_regime must be at least 1"));
        }
        if self.data.delta + self.data.context_len > self.data.master_len {
            return Err(Error::config(format!(
                "delta {} + context_len {} exceeds master_len {}",
                self.data.delta, self.data.context_len, self.data.master_len
            )));
        }
        if self.model.latent_dim == 0 {
            return Err(Error::config("latent_dim must be at least 1"));
        }
        if self.analyze.kmeans_restarts == 0 {
            return Err(Error::config("kmeans_restarts must be at least 1"));
        }
        if !(self.train.clip_grad_norm.is_finite() && self.train.clip_grad_norm >= 0.0) {
            return Err(Error::config(format!(
                "clip_grad_norm must be finite and non-negative, got {}",
                self.train.clip_grad_norm
            )));
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// Generation parameters with the fixed 70/20/10 split.
    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            global_seed: self.data.global_seed,
            seqs_per_regime: self.data.seqs_per_regime,
            master_len: self.data.master_len,
            context_len: self.data.context_len,
            delta: self.data.delta,
            ..DataConfig::default()
        }
    }

    /// Architecture derived from the model section; the input length comes
    /// from the data section's context windows.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_len: self.data.context_len,
            latent_dim: self.model.latent_dim,
            head: self.model.head,
            predictor: match self.model.predictor {
                PredictorChoice::Linear => {
                    PredictorKind::Linear { init: self.model.predictor_init }
                }
                PredictorChoice::Mlp => PredictorKind::Mlp,
            },
        }
    }

    /// Hyperparameters for the training loop.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch,
            lr: self.train.lr,
            ema_alpha: self.train.ema_alpha,
            seed: self.train.seed,
            eval_every: self.train.eval_every,
            clip_grad_norm: (self.train.clip_grad_norm > 0.0)
                .then_some(self.train.clip_grad_norm),
        }
    }
}
