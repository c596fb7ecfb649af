use ubgrad::oracle::quadrature_increment;
use ubgrad::rng::stream;
use ubgrad::smc::{increment_estimate, run_mlsmc_final};
use ubgrad::{CostLedger, KernelConfig, ModelSpec, Theta};

#[test]
fn increment_estimator_matches_quadrature() {
    let spec = ModelSpec::general_example().unwrap();
    let theta = Theta::new(0.3).unwrap();
    let level = 2;
    let truth = quadrature_increment(&spec, theta, level, 16).unwrap()[0];
    let runs: Vec<f64> = (0..40u64)
        .map(|r| {
            let mut ens = run_mlsmc_final(
                &spec,
                theta,
                1 << 10,
                level,
                &KernelConfig::default(),
                &mut stream(5, &[r]),
                &mut CostLedger::new(),
            )
            .unwrap();
            increment_estimate(&mut ens, &spec, theta).unwrap()[0]
        })
        .collect();
    let n = runs.len() as f64;
    let m = runs.iter().sum::<f64>() / n;
    let se = (runs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((m - truth).abs() < 3.0 * se, "mean {m} truth {truth} se {se}");
}

#[test]
fn level_potentials_are_bounded_over_the_prior_box() {
    let spec = ModelSpec::general_example().unwrap();
    let mut previous = f64::INFINITY;
    for level in 0..7 {
        let mut worst = 0.0f64;
        for theta in [0.05, 0.3, 2.0] {
            let t = Theta::new(theta).unwrap();
            for i in 0..=20 {
                for j in 0..=20 {
                    let u = [-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64];
                    let lg = spec.log_level_ratio(t, &u, level).unwrap();
                    assert!(lg.is_finite());
                    worst = worst.max(lg.abs());
                }
            }
        }
        assert!(worst < previous, "level {level}: {worst} ≥ {previous}");
        previous = worst;
    }
    assert!(previous < 0.05);
}
