use ubgrad_cli::experiments::{run_sgd_experiment, SgdRow};
use ubgrad_cli::{ExperimentConfig, ExperimentKind};

fn final_median(rows: &[SgdRow], variant: &str) -> f64 {
    let mut last: std::collections::BTreeMap<usize, f64> = Default::default();
    for r in rows.iter().filter(|r| r.variant == variant) {
        last.insert(r.replicate, r.squared_error_to_mle);
    }
    let mut v: Vec<f64> = last.into_values().collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn step_constant_phase_transition_lies_between_0_025_and_0_05() {
    let mut cfg = ExperimentConfig { kind: ExperimentKind::Sgd, seed: 21, replicates: 21, ..Default::default() };
    cfg.sgd.alpha = vec![0.025, 0.05, 0.1];
    cfg.sgd.iterations = 100_000;
    cfg.sgd.cost_budget = Some(20_000);
    cfg.validate().unwrap();
    let rows = run_sgd_experiment(&cfg).unwrap();
    let e: Vec<f64> =
        cfg.sgd.alpha.iter().map(|a| final_median(&rows, &format!("unbiased;alpha={a};pmax=0;M=1"))).collect();
    // below the transition the error decays at the slow Monte Carlo rate
    assert!(e[0] > 10.0 * e[1].max(e[2]), "median errors by alpha: {e:?}");
}
