use cprf::rng::stream;
use cprf::simlab::{
    gen_data, prepare_critical_values, run_experiment, run_experiment_with, sample_model, write_results_csv,
    ErrorDist, ExperimentConfig, RegressionFn, RESULTS_HEADER,
};
use cprf::{EhrenfestConfig, Error, SplitRule, SubsampleMode};

fn small(rule: SplitRule, regression: RegressionFn, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(2, 300, 3, 10, rule, 1.0, ErrorDist::Normal, regression, seed);
    cfg.replications = 40;
    cfg.pairs = 5000;
    cfg.sups = 5000;
    cfg
}

#[test]
fn forest_kinds_share_training_data() {
    let a = small(SplitRule::Uniform, RegressionFn::M2, 5);
    let b = small(SplitRule::Ehrenfest(EhrenfestConfig::new(12, 7.0)), RegressionFn::M2, 5);
    for r in [0, 1, 17] {
        let (da, db) = (gen_data(&a, r).unwrap(), gen_data(&b, r).unwrap());
        assert_eq!(da.x(), db.x());
        assert_eq!(da.y(), db.y());
    }
    assert_ne!(gen_data(&a, 0).unwrap().y(), gen_data(&a, 1).unwrap().y());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small(SplitRule::Uniform, RegressionFn::M2, 6);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let mut a = one.install(|| run_experiment(&cfg, None).unwrap());
    let mut b = two.install(|| run_experiment(&cfg, None).unwrap());
    a.wall_clock_secs = 0.0;
    b.wall_clock_secs = 0.0;
    assert_eq!(a, b);
}

#[test]
fn coverage_is_monotone_in_confidence() {
    let cfg = small(SplitRule::Uniform, RegressionFn::M2, 7);
    let res = run_experiment(&cfg, None).unwrap();
    assert!(res.levels.windows(2).all(|w| w[0].coverage <= w[1].coverage));
    assert!(res.levels.windows(2).all(|w| w[0].mean_radius < w[1].mean_radius));
    assert!(res.levels.iter().all(|l| (0.0..=1.0).contains(&l.coverage) && l.mean_radius > 0.0));
    assert_eq!(res.standardized_sups.len(), 40);
}

#[test]
fn cached_critical_values_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(SplitRule::Uniform, RegressionFn::Zero, 8);
    let fresh = prepare_critical_values(&cfg, Some(dir.path())).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    let cached = prepare_critical_values(&cfg, Some(dir.path())).unwrap();
    assert_eq!(fresh.table, cached.table);
    assert_eq!(fresh.quantiles, cached.quantiles);
    let mut a = run_experiment_with(&cfg, &fresh).unwrap();
    let mut b = run_experiment_with(&cfg, &cached).unwrap();
    a.wall_clock_secs = 0.0;
    b.wall_clock_secs = 0.0;
    assert_eq!(a, b);
}

#[test]
fn mismatched_critical_values_are_rejected() {
    let cfg = small(SplitRule::Uniform, RegressionFn::M2, 9);
    let cv = prepare_critical_values(&cfg, None).unwrap();
    let mut other = cfg.clone();
    other.k = 4;
    assert!(matches!(run_experiment_with(&other, &cv), Err(Error::Config(_))));
}

#[test]
fn failing_replication_reports_its_index() {
    let mut cfg = small(SplitRule::Uniform, RegressionFn::M2, 10);
    cfg.trees = 1;
    cfg.subsample_mode = SubsampleMode::Poissonized;
    match run_experiment(&cfg, None) {
        Err(Error::Replication { index, source }) => {
            assert!(index < cfg.replications);
            assert!(matches!(*source, Error::EmptyForest));
        }
        other => panic!("expected a replication error, got {other:?}"),
    }
}

#[test]
fn noise_is_scaled_to_sigma() {
    for dist in [ErrorDist::Normal, ErrorDist::Uniform, ErrorDist::StudentT(6.0)] {
        let mut rng = stream(11, &[0]);
        let s = sample_model(1, 400_000, RegressionFn::Zero, dist, 2.0, &mut rng).unwrap();
        let n = s.len() as f64;
        let mean = s.y().iter().sum::<f64>() / n;
        let sd = (s.y().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 2.0).abs() < 0.02, "{dist}: {sd}");
    }
}

#[test]
fn unit_normal_sd_is_calibrated() {
    let mut rng = stream(12, &[0]);
    let s = sample_model(1, 1_000_000, RegressionFn::Zero, ErrorDist::Normal, 1.0, &mut rng).unwrap();
    let n = s.len() as f64;
    let mean = s.y().iter().sum::<f64>() / n;
    let sd = (s.y().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((sd - 1.0).abs() < 0.005);
}

#[test]
fn results_csv_layout() {
    let cfg = small(SplitRule::Uniform, RegressionFn::M2, 13);
    let res = run_experiment(&cfg, None).unwrap();
    let mut out = Vec::new();
    write_results_csv(&mut out, &[res]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], RESULTS_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("uniform,1,10,normal,0.1,"));
    assert!(lines[1].ends_with(",40,13,2,300,3,m2"));
}
