mod common;

use common::{random_design, rng, table_from};
use quasiboot::sim::{generate_dataset, SimConfig};
use quasiboot::{
    fit, run_bootstrap, t_statistics, BootstrapConfig, Error, GroupingFactor, InferenceReport, ModelSpec,
    ObservationTable, ResampleMode, Workers,
};
use rand::Rng;

fn small_table(seed: u64, levels: usize) -> ObservationTable {
    let n = levels * 8;
    let mut r = rng(seed);
    let x = random_design(&mut r, n, 2);
    let b: Vec<f64> = (0..levels).map(|_| r.random_range(-0.7..0.7)).collect();
    let y = (0..n)
        .map(|i| {
            let mu = quasiboot::logistic(0.2 + 0.5 * x[(i, 1)] + b[i % levels]);
            (mu + r.random_range(-0.15..0.15)).clamp(0.0, 1.0)
        })
        .collect();
    let g = GroupingFactor::new("g", (0..levels).map(|l| format!("s{l}")).collect(), (0..n).map(|i| i % levels).collect())
        .unwrap();
    table_from(y, &x, vec![g])
}

fn config(resamples: usize, workers: Workers) -> BootstrapConfig {
    BootstrapConfig {
        resamples,
        seed: 99,
        workers,
        ..BootstrapConfig::default()
    }
}

#[test]
fn single_level_factor_reproduces_base_fit() {
    let mut r = rng(1);
    let x = random_design(&mut r, 30, 2);
    let y = (0..30).map(|_| r.random_range(0.0..1.0)).collect();
    let g = GroupingFactor::new("g", vec!["only".into()], vec![0; 30]).unwrap();
    let table = table_from(y, &x, vec![g]);
    let spec = ModelSpec::from_names(&["x1"], &[] as &[&str]).unwrap();
    let base = fit(&table, &spec).unwrap();
    let out = run_bootstrap(&table, &spec, &config(100, Workers::Auto)).unwrap();
    assert_eq!(out.successful(), 100);
    for j in 0..2 {
        assert!(t_statistics(&out, &base, j).unwrap().iter().all(|&t| t == 0.0));
    }
    let report = InferenceReport::build(&base, &out, 0.05).unwrap();
    for c in &report.coefficients {
        assert_eq!(c.ci_lower, c.estimate);
        assert_eq!(c.ci_upper, c.estimate);
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let table = small_table(4, 12);
    let spec = ModelSpec::from_names(&["x1"], &["g"]).unwrap();
    let a = run_bootstrap(&table, &spec, &config(120, Workers::Fixed(1))).unwrap();
    let b = run_bootstrap(&table, &spec, &config(120, Workers::Fixed(8))).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.successful() + a.failed(), 120);
    assert!(a.replicates.iter().all(|r| r.beta.len() == 2 && r.se.len() == 2));
}

#[test]
fn t_statistics_match_stored_replicates() {
    let table = small_table(5, 10);
    let spec = ModelSpec::from_names(&["x1"], &["g"]).unwrap();
    let base = fit(&table, &spec).unwrap();
    let out = run_bootstrap(&table, &spec, &config(100, Workers::Auto)).unwrap();
    for j in 0..2 {
        let ts = t_statistics(&out, &base, j).unwrap();
        let mut k = 0;
        for r in &out.replicates {
            let expected = (r.beta[j] - base.beta_hat[j]) / r.se[j];
            assert_eq!(ts[k], expected);
            k += 1;
        }
        assert_eq!(k, ts.len());
    }
}

#[test]
fn null_t_distribution_is_centered() {
    let sim = SimConfig { seed: 21, ..SimConfig::desk(0.6) };
    let spec = sim.model_spec().unwrap();
    let (table, _) = generate_dataset(&sim, 0).unwrap();
    let base = fit(&table, &spec).unwrap();
    let out = run_bootstrap(&table, &spec, &config(1000, Workers::Auto)).unwrap();
    for j in 1..base.n_coefficients() {
        let median = quasiboot::quantile(&t_statistics(&out, &base, j).unwrap(), 0.5).unwrap();
        assert!(median.abs() < 0.1, "median t* {median} for {}", base.coefficient_names[j]);
    }
}

#[test]
fn failures_beyond_threshold_abort() {
    // Level a is all zeros and level b all ones: a resample drawing only one
    // of them has no finite intercept.
    let y = [vec![0.0; 4], vec![1.0; 4], vec![0.5; 4]].concat();
    let g = GroupingFactor::from_labels("g", &[["a"; 4], ["b"; 4], ["c"; 4]].concat());
    let table = ObservationTable::with_intercept(y, vec![], vec![g]).unwrap();
    let spec = ModelSpec::from_names(&[] as &[&str], &[] as &[&str]).unwrap();
    let strict = run_bootstrap(&table, &spec, &config(200, Workers::Auto));
    assert!(matches!(strict, Err(Error::TooManyFailures { .. })), "{strict:?}");
    let lenient = BootstrapConfig {
        max_failure_fraction: 0.5,
        ..config(200, Workers::Auto)
    };
    let out = run_bootstrap(&table, &spec, &lenient).unwrap();
    assert!(out.failed() > 0);
    assert_eq!(out.successful() + out.failed(), 200);
}

#[test]
fn config_is_validated() {
    let table = small_table(6, 6);
    let spec = ModelSpec::from_names(&["x1"], &["g"]).unwrap();
    assert!(matches!(run_bootstrap(&table, &spec, &config(99, Workers::Auto)), Err(Error::InvalidConfig(_))));
    let bad_alpha = BootstrapConfig { alpha: 1.0, ..config(100, Workers::Auto) };
    assert!(run_bootstrap(&table, &spec, &bad_alpha).is_err());
    let one_factor_pigeonhole = BootstrapConfig {
        mode: ResampleMode::PigeonholeTwoWay,
        ..config(100, Workers::Auto)
    };
    assert!(run_bootstrap(&table, &spec, &one_factor_pigeonhole).is_err());
}

#[test]
fn pigeonhole_bootstrap_runs_on_crossed_design() {
    let sim = SimConfig {
        rows: 300,
        levels: vec![10, 6],
        crossed: true,
        ..SimConfig::desk(0.5)
    };
    let spec = sim.model_spec().unwrap();
    let (table, _) = generate_dataset(&sim, 2).unwrap();
    let cfg = BootstrapConfig {
        mode: ResampleMode::PigeonholeTwoWay,
        max_failure_fraction: 0.05,
        ..config(100, Workers::Auto)
    };
    let out = run_bootstrap(&table, &spec, &cfg).unwrap();
    assert_eq!(out.settings.factors, ["g1", "g2"]);
    let base = fit(&table, &spec).unwrap();
    let report = InferenceReport::build(&base, &out, 0.05).unwrap();
    assert!(report.coefficients.iter().all(|c| c.ci_lower < c.ci_upper));
}
