//! Command-line front end tying generation, training, analysis, and
//! reporting into reproducible experiment runs.
//!
//! Every command resolves its configuration (file plus defaults plus the
//! `--seed` override), echoes it in full, prints a `---` separator, and
//! only then acts, so each run's output records exactly the parameters
//! that produced it. The echoed block re-parses to an identical
//! configuration.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    centroid_action, deterministic_subset, embed_split, export_embeddings, full_scale_reference,
    kmeans, loss_decomposition_check, m_diagnostics, pathwise_invariance, purity,
    read_text_report, thresholds, write_json_report, write_text_report, AnalysisReport,
    PredictorMatrix, RegenerationParams, WindowSide, REPORT_CLUSTERS,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{checks, load_checkpoint, save_checkpoint, Model, TrainMode};
use crate::synthgen::{build_dataset, read_kjd1, Manifest, Split};
use crate::training::{format_epoch_line, train};

#[derive(Debug, Parser)]
#[command(
    name = "kjepa",
    version,
    about = "Train a time-series JEPA on synthetic dynamical regimes and \
             measure how close its predictor stays to the identity"
)]
pub struct Cli {
    /// Configuration file; every key has a default when the flag is
    /// omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed override: replaces the data seed for gen, the training seed
    /// for train, and the clustering seed for analyze and gradcheck.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Output directory: the dataset directory for gen, artifact directory
    /// for train and analyze. Defaults to the configured data directory
    /// for gen and to "runs" otherwise.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the three dataset splits and their manifest.
    Gen,
    /// Train a model and write its checkpoint.
    Train {
        /// "jepa" (prediction loss, EMA targets) or "ae" (reconstruction).
        #[arg(long, value_parser = parse_mode)]
        mode: TrainMode,
    },
    /// Compute every diagnostic over trained checkpoints and write report
    /// and embedding files.
    Analyze {
        /// KJC1 checkpoint of the trained JEPA.
        #[arg(long, value_name = "PATH")]
        jepa_checkpoint: PathBuf,
        /// Optional KJC1 checkpoint of the autoencoder baseline; without
        /// it the purity comparison is marked absent.
        #[arg(long, value_name = "PATH")]
        ae_checkpoint: Option<PathBuf>,
    },
    /// Summarize a report file against the desk-scale thresholds.
    Report {
        /// Text report written by analyze.
        #[arg(value_name = "PATH")]
        path: PathBuf,
    },
    /// Audit tape gradients against finite differences, layer by layer and
    /// end to end.
    Gradcheck,
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Executes one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Gen => config.data.global_seed = seed,
            Command::Train { .. } => config.train.seed = seed,
            Command::Analyze { .. } | Command::Gradcheck => config.analyze.kmeans_seed = seed,
            Command::Report { .. } => {}
        }
    }
    config.validate()?;
    print!("{}", config.to_text());
    println!("---");

    match cli.command {
        Command::Gen => cmd_gen(&config, cli.out.as_deref()),
        Command::Train { mode } => cmd_train(&config, mode, cli.out.as_deref()),
        Command::Analyze { jepa_checkpoint, ae_checkpoint } => {
            cmd_analyze(&config, &jepa_checkpoint, ae_checkpoint.as_deref(), cli.out.as_deref())
        }
        Command::Report { path } => cmd_report(&path),
        Command::Gradcheck => cmd_gradcheck(config.analyze.kmeans_seed),
    }
}

/// Artifact directory for train and analyze outputs.
fn artifact_dir(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"))
}

fn cmd_gen(config: &ExperimentConfig, out: Option<&Path>) -> Result<i32> {
    let out_dir = out.unwrap_or(&config.data.out_dir);
    let files = build_dataset(&config.data_config(), out_dir)?;
    let (train_pairs, val_pairs, test_pairs) = files.pair_counts;
    println!(
        "split=train pairs={} hash={:#018x} file={}",
        train_pairs,
        files.train_hash,
        files.train.display()
    );
    println!(
        "split=val pairs={} hash={:#018x} file={}",
        val_pairs,
        files.val_hash,
        files.val.display()
    );
    println!(
        "split=test pairs={} hash={:#018x} file={}",
        test_pairs,
        files.test_hash,
        files.test.display()
    );
    println!("manifest={}", files.manifest.display());
    Ok(0)
}

fn cmd_train(config: &ExperimentConfig, mode: TrainMode, out: Option<&Path>) -> Result<i32> {
    if mode == TrainMode::Ae {
        eprintln!("warning: mode=ae ignores the [model] predictor settings");
    }
    let data_dir = &config.data.out_dir;
    let train_split = read_kjd1(&data_dir.join(Split::Train.file_name()))?;
    let val_split = read_kjd1(&data_dir.join(Split::Val.file_name()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut model = Model::init(&config.model_config(), mode, &mut rng)?;
    let history = train(&mut model, &train_split, &val_split, &config.train_config(), |r| {
        println!("{}", format_epoch_line(r));
    })?;

    let out_dir = artifact_dir(out);
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join(format!("{}.kjc1", mode.label()));
    save_checkpoint(&path, &model)?;
    println!("checkpoint={}", path.display());
    if let Some(val) = history.last().and_then(|r| r.val_loss) {
        println!("final_val_loss={val:.6}");
    }
    Ok(0)
}

fn cmd_analyze(
    config: &ExperimentConfig,
    jepa_checkpoint: &Path,
    ae_checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<i32> {
    let data_dir = &config.data.out_dir;
    let manifest = Manifest::read_from(&data_dir.join("manifest.txt"))?;
    let test_split = read_kjd1(&data_dir.join(Split::Test.file_name()))?;
    let batch = config.train.batch;

    let model_config = config.model_config();
    let model = load_checkpoint(jepa_checkpoint, &model_config, TrainMode::Jepa)?;

    let embeddings = embed_split(&model, &test_split, WindowSide::Context, batch)?;
    let clustering = kmeans(
        &embeddings.rows_f64(),
        REPORT_CLUSTERS,
        config.analyze.kmeans_restarts,
        config.analyze.kmeans_seed,
    )?;
    let purity_jepa = purity(&clustering.assignments, &embeddings.labels)?;

    let matrix = PredictorMatrix::from_model(&model)?;
    let diag = m_diagnostics(&matrix)?;
    let centroids = centroid_action(&matrix, &clustering.centroids)?;
    let invariance_err = pathwise_invariance(&model, &test_split, batch)?;

    let noise_free = deterministic_subset(&test_split);
    let decomposition_gap = loss_decomposition_check(
        &model,
        &noise_free,
        &RegenerationParams::from(&manifest),
        batch,
    )?;

    let out_dir = artifact_dir(out);
    std::fs::create_dir_all(&out_dir)?;
    export_embeddings(&embeddings, &out_dir.join("embeddings_jepa.csv"))?;

    let purity_ae = match ae_checkpoint {
        Some(path) => {
            let ae_model = load_checkpoint(path, &model_config, TrainMode::Ae)?;
            let ae_embeddings = embed_split(&ae_model, &test_split, WindowSide::Context, batch)?;
            let ae_clustering = kmeans(
                &ae_embeddings.rows_f64(),
                REPORT_CLUSTERS,
                config.analyze.kmeans_restarts,
                config.analyze.kmeans_seed,
            )?;
            export_embeddings(&ae_embeddings, &out_dir.join("embeddings_ae.csv"))?;
            Some(purity(&ae_clustering.assignments, &ae_embeddings.labels)?)
        }
        None => None,
    };

    let report = AnalysisReport {
        purity_jepa,
        purity_ae,
        frob_rel: diag.frob_rel,
        skew_rel: diag.skew_rel,
        eigen_mags: diag.eigen_mags,
        centroid_errors: centroids.errors,
        invariance_err,
        decomposition_gap,
    };
    report.validate()?;
    write_text_report(&report, &out_dir.join("report.txt"))?;
    write_json_report(&report, &out_dir.join("report.json"))?;
    print!("{}", report.to_text());
    Ok(0)
}

/// One row of the report summary: a value against its desk-scale bound,
/// with the published full-scale result alongside where one exists.
struct SummaryRow {
    metric: &'static str,
    value: String,
    bound: String,
    reference: String,
    /// `None` for informational rows that carry no bound.
    passed: Option<bool>,
}

fn summary_rows(report: &AnalysisReport) -> Vec<SummaryRow> {
    use thresholds as t;
    let fmt = |v: f64| format!("{v:.6}");
    let reference = |v: f64| format!("{v:.4}");
    let mut rows = Vec::new();

    rows.push(SummaryRow {
        metric: "purity_jepa",
        value: fmt(report.purity_jepa),
        bound: format!(">= {}", t::PURITY_JEPA_MIN),
        reference: reference(full_scale_reference::PURITY_JEPA),
        passed: Some(report.purity_jepa >= t::PURITY_JEPA_MIN),
    });
    rows.push(SummaryRow {
        metric: "purity_ae",
        value: report.purity_ae.map_or_else(|| "absent".to_string(), fmt),
        bound: "(baseline)".to_string(),
        reference: reference(full_scale_reference::PURITY_AE),
        passed: None,
    });
    let gap = report.purity_ae.map(|ae| report.purity_jepa - ae);
    rows.push(SummaryRow {
        metric: "purity_gap",
        value: gap.map_or_else(|| "absent".to_string(), fmt),
        bound: format!(">= {}", t::PURITY_GAP_MIN),
        reference: reference(
            full_scale_reference::PURITY_JEPA - full_scale_reference::PURITY_AE,
        ),
        passed: Some(gap.is_some_and(|g| g >= t::PURITY_GAP_MIN)),
    });
    rows.push(SummaryRow {
        metric: "frob_rel",
        value: fmt(report.frob_rel),
        bound: format!("<= {}", t::FROB_REL_MAX),
        reference: reference(full_scale_reference::FROB_REL),
        passed: Some(report.frob_rel <= t::FROB_REL_MAX),
    });
    rows.push(SummaryRow {
        metric: "skew_rel",
        value: fmt(report.skew_rel),
        bound: format!("<= {}", t::SKEW_REL_MAX),
        reference: reference(full_scale_reference::SKEW_REL),
        passed: Some(report.skew_rel <= t::SKEW_REL_MAX),
    });
    rows.push(SummaryRow {
        metric: "centroid_err_mean",
        value: fmt(report.centroid_mean()),
        bound: format!("<= {}", t::CENTROID_MEAN_MAX),
        reference: reference(full_scale_reference::CENTROID_MEAN),
        passed: Some(report.centroid_mean() <= t::CENTROID_MEAN_MAX),
    });
    let (lo, hi) = t::EIGEN_BAND;
    let in_band = report.eigen_mags.iter().filter(|&&m| (lo..=hi).contains(&m)).count();
    rows.push(SummaryRow {
        metric: "eigen_in_band",
        value: in_band.to_string(),
        bound: format!(">= {} in [{lo}, {hi}]", t::EIGEN_IN_BAND_MIN),
        reference: "-".to_string(),
        passed: Some(in_band >= t::EIGEN_IN_BAND_MIN),
    });
    rows.push(SummaryRow {
        metric: "invariance_err",
        value: fmt(report.invariance_err),
        bound: format!("<= {}", t::INVARIANCE_MAX),
        reference: "-".to_string(),
        passed: Some(report.invariance_err <= t::INVARIANCE_MAX),
    });
    rows.push(SummaryRow {
        metric: "decomposition_gap",
        value: format!("{:.3e}", report.decomposition_gap),
        bound: format!("<= {:e}", t::DECOMPOSITION_GAP_MAX),
        reference: "-".to_string(),
        passed: Some(report.decomposition_gap <= t::DECOMPOSITION_GAP_MAX),
    });
    rows
}

fn cmd_report(path: &Path) -> Result<i32> {
    let report = read_text_report(path)?;
    let rows = summary_rows(&report);

    println!(
        "{:<18} {:>12}  {:<22} {:>20}  {}",
        "metric", "value", "desk threshold", "paper (full scale)", "status"
    );
    let mut all_passed = true;
    for row in &rows {
        let status = match row.passed {
            Some(true) => "pass",
            Some(false) => {
                all_passed = false;
                "FAIL"
            }
            None => "-",
        };
        println!(
            "{:<18} {:>12}  {:<22} {:>20}  {}",
            row.metric, row.value, row.bound, row.reference, status
        );
    }
    println!("overall: {}", if all_passed { "pass" } else { "FAIL" });
    Ok(if all_passed { 0 } else { 1 })
}

fn cmd_gradcheck(seed: u64) -> Result<i32> {
    let audits = checks::run_all(seed)?;
    let mut all_passed = true;
    for audit in &audits {
        let status = if audit.passed() {
            "pass"
        } else {
            all_passed = false;
            "FAIL"
        };
        println!(
            "check={} max_rel_err={:.3e} tolerance={:e} status={}",
            audit.name, audit.max_rel_err, audit.tolerance, status
        );
    }
    Ok(if all_passed { 0 } else { 1 })
}
