//! Standardization, context/target window extraction, deterministic
//! splits, and the top-level dataset builder.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synthgen::format::{KjdWriter, Manifest};
use crate::synthgen::regimes::{generate_master, regime_table, GENERATOR_VERSION, NUM_REGIMES};

/// Generation settings; the `[data]` section of the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub global_seed: u64,
    pub seqs_per_regime: u32,
    pub master_len: usize,
    pub context_len: usize,
    pub delta: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            global_seed: 42,
            seqs_per_regime: 500,
            master_len: 1024,
            context_len: 768,
            delta: 256,
            train_frac: 0.7,
            val_frac: 0.2,
            test_frac: 0.1,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seqs_per_regime < 10 {
            return Err(Error::config(format!(
                "seqs_per_regime must be at least 10, got {}",
                self.seqs_per_regime
            )));
        }
        if self.context_len == 0 || self.delta == 0 {
            return Err(Error::config("context_len and delta must be positive".to_string()));
        }
        if self.delta + self.context_len > self.master_len {
            return Err(Error::config(format!(
                "delta {} + context_len {} exceeds master_len {}",
                self.delta, self.context_len, self.master_len
            )));
        }
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions sum to {sum}, expected 1")));
        }
        if self.train_frac <= 0.0 || self.val_frac <= 0.0 || self.test_frac <= 0.0 {
            return Err(Error::config("split fractions must all be positive".to_string()));
        }
        let (train, val, test) = split_counts(self.seqs_per_regime, self.train_frac, self.val_frac);
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::config(format!(
                "splits {train}/{val}/{test} leave an empty split at {} sequences per regime",
                self.seqs_per_regime
            )));
        }
        Ok(())
    }
}

/// One context/target training example plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub regime_label: u16,
    pub seq_index: u32,
    pub context: Vec<f32>,
    pub target: Vec<f32>,
}

/// An in-memory split loaded from (or destined for) a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub pairs: Vec<WindowPair>,
    pub context_len: usize,
    pub target_len: usize,
    pub num_regimes: usize,
}

/// The three dataset splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.kjd1", self.name())
    }
}

/// Sequences per regime in each split: floor(n*frac) for train and val,
/// remainder for test. The 1e-9 nudge absorbs binary representation error
/// in products like 10 * 0.7 without changing any honest fractional case.
pub fn split_counts(n: u32, train_frac: f64, val_frac: f64) -> (u32, u32, u32) {
    let train = (f64::from(n) * train_frac + 1e-9).floor() as u32;
    let val = (f64::from(n) * val_frac + 1e-9).floor() as u32;
    (train, val, n - train - val)
}

/// Half-open `seq_index` range a split covers within each regime.
pub fn split_range(split: Split, n: u32, train_frac: f64, val_frac: f64) -> std::ops::Range<u32> {
    let (train, val, _) = split_counts(n, train_frac, val_frac);
    match split {
        Split::Train => 0..train,
        Split::Val => train..train + val,
        Split::Test => train + val..n,
    }
}

/// Centers and scales to zero mean and unit population std,
/// `(v - mean) / (std + 1e-8)`; the epsilon keeps constant sequences at
/// exactly zero instead of dividing by zero.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    values.iter().map(|v| (v - mean) / denom).collect()
}

/// Cuts the context window `[0, context_len)` and target window
/// `[delta, delta + context_len)` out of a standardized sequence.
pub fn extract_pair(
    standardized: &[f64],
    context_len: usize,
    delta: usize,
    regime_label: u16,
    seq_index: u32,
) -> Result<WindowPair> {
    if delta + context_len > standardized.len() {
        return Err(Error::dim(format!(
            "window [{delta}, {}) exceeds sequence length {}",
            delta + context_len,
            standardized.len()
        )));
    }
    let context = standardized[..context_len].iter().map(|&v| v as f32).collect();
    let target =
        standardized[delta..delta + context_len].iter().map(|&v| v as f32).collect();
    Ok(WindowPair { regime_label, seq_index, context, target })
}

/// Paths and content hashes of a generated dataset.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub manifest: PathBuf,
    pub train_hash: u64,
    pub val_hash: u64,
    pub test_hash: u64,
    /// Pairs written per split.
    pub pair_counts: (u32, u32, u32),
}

/// Generates all master sequences, standardizes them, extracts one window
/// pair per sequence and writes the three split files plus a manifest into
/// `out_dir`. Fully deterministic in `cfg`.
pub fn build_dataset(cfg: &DataConfig, out_dir: &Path) -> Result<DatasetFiles> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let n = cfg.seqs_per_regime;
    let (per_train, per_val, per_test) = split_counts(n, cfg.train_frac, cfg.val_frac);
    let regimes = regime_table();
    let mut hashes = [0u64; 3];

    for (slot, split) in Split::ALL.into_iter().enumerate() {
        let range = split_range(split, n, cfg.train_frac, cfg.val_frac);
        let num_pairs = range.len() as u32 * NUM_REGIMES as u32;
        let path = out_dir.join(split.file_name());
        let mut writer = KjdWriter::create(
            &path,
            num_pairs,
            cfg.context_len as u32,
            cfg.context_len as u32,
            NUM_REGIMES as u32,
        )?;
        for spec in regimes {
            for seq_index in range.clone() {
                let master = generate_master(spec, cfg.global_seed, seq_index, cfg.master_len)?;
                let standardized = standardize(&master.values);
                let pair = extract_pair(
                    &standardized,
                    cfg.context_len,
                    cfg.delta,
                    spec.regime_id,
                    seq_index,
                )?;
                writer.write_pair(&pair)?;
            }
        }
        hashes[slot] = writer.finish()?;
    }

    let manifest = Manifest {
        generator: GENERATOR_VERSION.to_string(),
        global_seed: cfg.global_seed,
        seqs_per_regime: cfg.seqs_per_regime,
        master_len: cfg.master_len,
        context_len: cfg.context_len,
        delta: cfg.delta,
        train_frac: cfg.train_frac,
        val_frac: cfg.val_frac,
        test_frac: cfg.test_frac,
        hash_train: hashes[0],
        hash_val: hashes[1],
        hash_test: hashes[2],
    };
    let manifest_path = out_dir.join("manifest.txt");
    manifest.write_to(&manifest_path)?;

    Ok(DatasetFiles {
        train: out_dir.join(Split::Train.file_name()),
        val: out_dir.join(Split::Val.file_name()),
        test: out_dir.join(Split::Test.file_name()),
        manifest: manifest_path,
        train_hash: hashes[0],
        val_hash: hashes[1],
        test_hash: hashes[2],
        pair_counts: (
            per_train * NUM_REGIMES as u32,
            per_val * NUM_REGIMES as u32,
            per_test * NUM_REGIMES as u32,
        ),
    })
}
