//! End-to-end pipeline checks through the compiled binary: gen, train,
//! analyze, report, and gradcheck at toy scale, plus configuration and
//! exit-code behavior.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kjepa::analysis::{import_embeddings, read_json_report, read_text_report};
use kjepa::config::ExperimentConfig;
use tempfile::TempDir;

const TINY_CONFIG: &str = "\
[data]
seqs_per_regime=10
context_len=96
delta=32
master_len=160
out_dir=data

[model]
latent_dim=8

[train]
epochs=2
batch=32

[analyze]
kmeans_restarts=2
";

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kjepa"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed with {:?}:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stdout_str(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

/// Splits a command's stdout into the echoed configuration block and the
/// rest.
fn split_echo(stdout: &str) -> (String, String) {
    let (echo, rest) = stdout.split_once("---\n").expect("output carries a --- separator");
    (echo.to_string(), rest.to_string())
}

fn write_tiny_config(dir: &Path) {
    fs::write(dir.join("tiny.cfg"), TINY_CONFIG).unwrap();
}

#[test]
fn echoed_config_reparses_identically_and_reflects_seed_override() {
    let dir = TempDir::new().unwrap();
    write_tiny_config(dir.path());

    let output = run_in(dir.path(), &["--config", "tiny.cfg", "--seed", "7", "gen"]);
    assert_success(&output, "gen");
    let (echo, _) = split_echo(&stdout_str(&output));

    let echoed = ExperimentConfig::parse(&echo).expect("echo re-parses");
    let mut expected = ExperimentConfig::parse(TINY_CONFIG).unwrap();
    expected.data.global_seed = 7;
    assert_eq!(echoed, expected);
}

#[test]
fn gen_is_deterministic_and_splits_follow_the_seventy_twenty_ten_rule() {
    let dir = TempDir::new().unwrap();
    write_tiny_config(dir.path());

    let first = run_in(dir.path(), &["--config", "tiny.cfg", "gen"]);
    assert_success(&first, "first gen");
    let second = run_in(dir.path(), &["--config", "tiny.cfg", "gen", "--out", "other"]);
    assert_success(&second, "second gen");

    let (_, body_a) = split_echo(&stdout_str(&first));
    let (_, body_b) = split_echo(&stdout_str(&second));
    let hashes = |body: &str| -> Vec<String> {
        body.lines()
            .filter_map(|l| l.split_whitespace().find(|f| f.starts_with("hash=")))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(hashes(&body_a).len(), 3);
    assert_eq!(hashes(&body_a), hashes(&body_b));

    // 10 sequences per regime split 7/2/1 across 18 regimes.
    assert!(body_a.contains("split=train pairs=126 "), "{body_a}");
    assert!(body_a.contains("split=val pairs=36 "), "{body_a}");
    assert!(body_a.contains("split=test pairs=18 "), "{body_a}");

    let reseeded = run_in(dir.path(), &["--config", "tiny.cfg", "--seed", "43", "gen", "--out", "r"]);
    assert_success(&reseeded, "reseeded gen");
    let (_, body_c) = split_echo(&stdout_str(&reseeded));
    assert_ne!(hashes(&body_a), hashes(&body_c), "seed override must change content");
}

#[test]
fn full_pipeline_writes_consistent_artifacts() {
    let dir = TempDir::new().unwrap();
    write_tiny_config(dir.path());

    assert_success(&run_in(dir.path(), &["--config", "tiny.cfg", "gen"]), "gen");

    let train = run_in(
        dir.path(),
        &["--config", "tiny.cfg", "train", "--mode", "jepa", "--out", "run"],
    );
    assert_success(&train, "train jepa");
    let (_, body) = split_echo(&stdout_str(&train));
    let epoch_lines: Vec<&str> =
        body.lines().filter(|l| l.starts_with("epoch=")).collect();
    assert_eq!(epoch_lines.len(), 2);
    assert!(
        epoch_lines[0].contains(" train_loss=") && epoch_lines[0].contains(" val_loss="),
        "{body}"
    );

    let ae = run_in(
        dir.path(),
        &["--config", "tiny.cfg", "train", "--mode", "ae", "--out", "run"],
    );
    assert_success(&ae, "train ae");
    assert!(
        String::from_utf8_lossy(&ae.stderr).contains("ignores the [model] predictor"),
        "ae training must warn that predictor settings are unused"
    );

    let analyze = run_in(
        dir.path(),
        &[
            "--config",
            "tiny.cfg",
            "analyze",
            "--jepa-checkpoint",
            "run/jepa.kjc1",
            "--ae-checkpoint",
            "run/ae.kjc1",
            "--out",
            "run",
        ],
    );
    assert_success(&analyze, "analyze");

    let report = read_text_report(&dir.path().join("run/report.txt")).unwrap();
    let json = read_json_report(&dir.path().join("run/report.json")).unwrap();
    assert_eq!(report, json, "text and JSON reports must agree exactly");
    assert!(report.purity_ae.is_some());
    assert_eq!(report.eigen_mags.len(), 8);
    // The analyzed subset is noise-free, so the identity holds for any
    // checkpoint.
    assert!(report.decomposition_gap <= 1e-6);

    let embeddings = import_embeddings(&dir.path().join("run/embeddings_jepa.csv")).unwrap();
    assert_eq!(embeddings.len(), 18);
    assert_eq!(embeddings.latent_dim(), 8);
    assert!(dir.path().join("run/embeddings_ae.csv").exists());

    // Analysis is deterministic: a second run reproduces the report
    // byte for byte.
    let again = run_in(
        dir.path(),
        &[
            "--config",
            "tiny.cfg",
            "analyze",
            "--jepa-checkpoint",
            "run/jepa.kjc1",
            "--ae-checkpoint",
            "run/ae.kjc1",
            "--out",
            "run2",
        ],
    );
    assert_success(&again, "second analyze");
    assert_eq!(
        fs::read_to_string(dir.path().join("run/report.txt")).unwrap(),
        fs::read_to_string(dir.path().join("run2/report.txt")).unwrap()
    );
}

#[test]
fn training_twice_with_one_seed_reproduces_the_log() {
    let dir = TempDir::new().unwrap();
    write_tiny_config(dir.path());
    assert_success(&run_in(dir.path(), &["--config", "tiny.cfg", "gen"]), "gen");

    let a = run_in(dir.path(), &["--config", "tiny.cfg", "train", "--mode", "jepa", "--out", "a"]);
    let b = run_in(dir.path(), &["--config", "tiny.cfg", "train", "--mode", "jepa", "--out", "b"]);
    assert_success(&a, "first train");
    assert_success(&b, "second train");

    let losses = |out: &Output| -> Vec<String> {
        stdout_str(out)
            .lines()
            .filter(|l| l.starts_with("epoch="))
            .map(|l| l.split(" ms=").next().unwrap().to_string())
            .collect()
    };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(
        fs::read(dir.path().join("a/jepa.kjc1")).unwrap(),
        fs::read(dir.path().join("b/jepa.kjc1")).unwrap(),
        "checkpoints must be byte-identical"
    );
}

#[test]
fn config_errors_are_rejected_with_the_offending_key() {
    let dir = TempDir::new().unwrap();

    fs::write(dir.path().join("bad_key.cfg"), "[train]\nepochz=5\n").unwrap();
    let output = run_in(dir.path(), &["--config", "bad_key.cfg", "gen"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr).to_string();
    assert!(stderr.contains("epochz"), "{stderr}");

    fs::write(
        dir.path().join("bad_geom.cfg"),
        "[data]\ncontext_len=768\ndelta=512\nmaster_len=1024\n",
    )
    .unwrap();
    let output = run_in(dir.path(), &["--config", "bad_geom.cfg", "gen"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr).to_string();
    assert!(stderr.contains("exceeds master_len"), "{stderr}");

    let output = run_in(dir.path(), &["--config", "missing.cfg", "gen"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn report_command_distinguishes_pass_from_fail() {
    let dir = TempDir::new().unwrap();

    let passing = "\
report_version=1
purity_jepa=0.61
purity_ae=0.39
frob_rel=0.04
skew_rel=0.03
eigen_mags=1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1
centroid_errors=0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01,0.01
invariance_err=0.15
decomposition_gap=0
";
    fs::write(dir.path().join("pass.txt"), passing).unwrap();
    let output = run_in(dir.path(), &["report", "pass.txt"]);
    assert_eq!(output.status.code(), Some(0), "{}", stdout_str(&output));
    let (_, body) = split_echo(&stdout_str(&output));
    assert!(body.contains("paper (full scale)"), "{body}");
    assert!(body.contains("0.6548") && body.contains("0.3881"), "{body}");
    assert!(body.contains("0.0234") && body.contains("0.0206") && body.contains("0.0080"), "{body}");
    assert!(body.contains("overall: pass"), "{body}");

    let failing = passing.replace("frob_rel=0.04", "frob_rel=0.4");
    fs::write(dir.path().join("fail.txt"), failing).unwrap();
    let output = run_in(dir.path(), &["report", "fail.txt"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stdout_str(&output).contains("overall: FAIL"));

    // A report without the baseline purity cannot demonstrate the
    // clustering advantage, so it cannot pass overall.
    let absent = passing.replace("purity_ae=0.39", "purity_ae=absent");
    fs::write(dir.path().join("absent.txt"), absent).unwrap();
    let output = run_in(dir.path(), &["report", "absent.txt"]);
    assert_eq!(output.status.code(), Some(1));

    let malformed = passing.replace("frob_rel=0.04", "frob_rel=not_a_number");
    fs::write(dir.path().join("malformed.txt"), malformed).unwrap();
    let output = run_in(dir.path(), &["report", "malformed.txt"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr).to_string();
    assert!(stderr.contains("line 4"), "{stderr}");
}

#[test]
fn gradcheck_command_passes_and_reports_every_audit() {
    let dir = TempDir::new().unwrap();
    let output = run_in(dir.path(), &["gradcheck"]);
    assert_success(&output, "gradcheck");
    let (_, body) = split_echo(&stdout_str(&output));
    for name in
        ["affine", "conv1d", "conv_transpose1d", "relu", "mse", "jepa_composite", "ae_composite"]
    {
        assert!(body.contains(&format!("check={name} ")), "missing {name} in {body}");
    }
    assert!(!body.contains("FAIL"), "{body}");
}
