//! Synthetic corpus: 18 dynamical regimes, per-sequence standardization,
//! context/target window extraction and deterministic on-disk splits.

pub mod arma;
pub mod dataset;
pub mod format;
pub mod regimes;

pub use arma::{arma_sample, arma_sample_conditional_mean};
pub use dataset::{
    build_dataset, extract_pair, split_counts, split_range, standardize, DataConfig, DatasetFiles,
    DatasetSplit, Split, WindowPair,
};
pub use format::{file_hash, read_kjd1, KjdWriter, Manifest};
pub use regimes::{
    generate_master, generate_master_conditional_mean, generate_master_noise_free,
    kind_is_deterministic, regime_table, sequence_seed, MasterSequence, RegimeKind, RegimeSpec,
    ARMA_BURN_IN, GENERATOR_VERSION, NUM_REGIMES,
};
