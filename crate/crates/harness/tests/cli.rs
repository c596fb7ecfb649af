use std::process::Command;

use ubgrad::oracle::ToyClosedForm;
use ubgrad::{ModelSpec, Theta};
use ubgrad_cli::experiments::{run_estimate, run_sgd_experiment, run_single_estimator_experiment};
use ubgrad_cli::output::csv_string;
use ubgrad_cli::{ExperimentConfig, ExperimentKind};

fn ubgrad(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ubgrad")).args(args).output().unwrap()
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> String {
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn smoke_mse_run_writes_one_row_per_variant() {
    let mut cfg = ExperimentConfig { kind: ExperimentKind::Mse, replicates: 1, ..Default::default() };
    cfg.mse.p_max = vec![0];
    cfg.mse.m = vec![1, 2];
    cfg.mse.mlsmc_levels = vec![0, 1];
    let rows = run_single_estimator_experiment(&cfg).unwrap();
    let tags: Vec<(&str, &str)> = rows.iter().map(|r| (r.method.as_str(), r.tag.as_str())).collect();
    assert_eq!(tags, vec![("unbiased", "pmax=0;M=1"), ("unbiased", "pmax=0;M=2"), ("mlsmc", "L=0"), ("mlsmc", "L=1")]);
    let text = csv_string(&cfg.hash(), &rows).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# schema=v1 config_hash={}", cfg.hash()));
    assert_eq!(lines.next().unwrap(), "method,tag,replicate,cost_units,squared_error");
    assert_eq!(lines.count(), 4);
}

#[test]
fn zero_iteration_sgd_emits_only_the_start() {
    let mut cfg = ExperimentConfig { kind: ExperimentKind::Sgd, replicates: 2, ..Default::default() };
    cfg.sgd.iterations = 0;
    cfg.sgd.mlsmc_levels = vec![1];
    let rows = run_sgd_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.iteration == 0 && r.cumulative_cost == 0));
    let text = csv_string(&cfg.hash(), &rows).unwrap();
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "variant,replicate,iteration,cumulative_cost,squared_error_to_mle,squared_error_to_truth"
    );
}

#[test]
fn sgd_rows_follow_checkpoints_and_costs_accumulate() {
    let mut cfg = ExperimentConfig { kind: ExperimentKind::Sgd, replicates: 1, ..Default::default() };
    cfg.sgd.iterations = 30;
    let rows = run_sgd_experiment(&cfg).unwrap();
    assert_eq!(rows.first().unwrap().iteration, 0);
    assert_eq!(rows.last().unwrap().iteration, 30);
    assert!(rows.windows(2).all(|w| w[0].iteration < w[1].iteration && w[0].cumulative_cost < w[1].cumulative_cost));
}

#[test]
fn estimate_is_reproducible_and_lists_every_draw() {
    let cfg = ExperimentConfig { seed: 12, ..Default::default() };
    let a = run_estimate(&cfg).unwrap();
    let b = run_estimate(&cfg).unwrap();
    assert_eq!(a.to_string(), b.to_string());
    assert_eq!(a.draws.len(), 10);
    assert_eq!(a.to_string().lines().filter(|l| l.starts_with("draw ")).count(), 10);
}

#[test]
fn toy_estimate_is_within_noise_of_the_closed_form() {
    let mut cfg = ExperimentConfig { seed: 13, ..Default::default() };
    cfg.estimate.m = 2000;
    let report = run_estimate(&cfg).unwrap();
    let truth =
        ToyClosedForm::from_spec(&ModelSpec::toy_example().unwrap()).unwrap().grad_log_marginal(Theta::new(2.0).unwrap()).unwrap();
    // per-draw standard deviation is about 1.5
    assert!((report.value - truth).abs() < 4.0 * 1.5 / (2000f64).sqrt(), "{} vs {truth}", report.value);
}

#[test]
fn binary_estimate_and_oracle() {
    let out = ubgrad(&["estimate", "--seed", "3", "--threads", "1"]);
    assert!(out.status.success());
    let again = ubgrad(&["estimate", "--seed", "3", "--threads", "2"]);
    assert_eq!(out.stdout, again.stdout);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("gradient = ") && text.contains("cost_units = "));

    let out = ubgrad(&["oracle"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("grad_log_marginal = -3.21665"), "{text}");
    assert!(text.contains("mle = 1.58094"));
}

#[test]
fn binary_writes_csv_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "replicates = 2\n[mse]\np_max = [0]\nm = [1]\nmlsmc_levels = []\n");
    let out = dir.path().join("rows.csv");
    let status = ubgrad(&["mse", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("# schema=v1 config_hash="));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "[mse]\nm = [0]\n");
    let out = ubgrad(&["mse", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[config]:") && err.contains("`mse.m`"), "{err}");

    let out = ubgrad(&["estimate", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(out.status.code(), Some(3));
    let out = ubgrad(&["estimate", "--threads", "0"]);
    assert_ne!(out.status.code(), Some(0));
}
