mod common;

use common::{covariates, irls, random_design, rng, table_from};
use proptest::prelude::*;
use quasiboot::sim::{generate_dataset, run_oracle, SimConfig};
use quasiboot::{fit_fixed, fit_mixed, GroupingFactor, ModelSpec, ObservationTable};
use rand::Rng;

fn sim_config(effects_null: bool) -> SimConfig {
    SimConfig {
        effects_null,
        seed: 77,
        ..SimConfig::desk(0.6)
    }
}

#[test]
fn identical_levels_collapse_variance_to_zero() {
    // Every level holds the same rows, so the factor explains nothing.
    let mut r = rng(3);
    let x0 = random_design(&mut r, 20, 2);
    let y0: Vec<f64> = (0..20).map(|_| r.random_range(0.0..1.0)).collect();
    let levels = 5;
    let n = 20 * levels;
    let x = nalgebra::DMatrix::from_fn(n, 2, |i, j| x0[(i % 20, j)]);
    let y: Vec<f64> = (0..n).map(|i| y0[i % 20]).collect();
    let g = GroupingFactor::new("g", (0..levels).map(|l| l.to_string()).collect(), (0..n).map(|i| i / 20).collect())
        .unwrap();
    let table = table_from(y, &x, vec![g]);
    let mixed = fit_mixed(&table, &ModelSpec::from_names(&["x1"], &["g"]).unwrap()).unwrap();
    let fixed = fit_fixed(&table, &ModelSpec::from_names(&["x1"], &[] as &[&str]).unwrap()).unwrap();
    let re = &mixed.random_effects[0];
    assert!(re.variance < 1e-6, "variance {}", re.variance);
    assert!(re.modes.iter().all(|&m| m == 0.0 || re.variance > 0.0));
    for j in 0..2 {
        assert!((mixed.beta_hat[j] - fixed.beta_hat[j]).abs() < 1e-5 * fixed.base_se[j].max(1.0));
    }
    assert!((mixed.objective_value - fixed.objective_value).abs() < 1e-8 * fixed.objective_value.abs().max(1.0));
}

#[test]
fn recovers_known_coefficients() {
    let config = sim_config(false);
    let spec = config.model_spec().unwrap();
    let mut covered = 0;
    for rep in 0..100 {
        let (table, truth) = generate_dataset(&config, rep).unwrap();
        let f = fit_mixed(&table, &spec).unwrap();
        assert!(f.converged && f.base_se.iter().all(|&s| s > 0.0));
        let ok = (0..f.n_coefficients()).all(|j| (f.beta_hat[j] - truth.beta[j]).abs() <= 3.0 * f.base_se[j]);
        covered += usize::from(ok);
    }
    assert!(covered >= 95, "{covered} of 100 replicates within 3 SE");
}

#[test]
fn oracle_agrees_with_mixed_fit() {
    let config = sim_config(false);
    let spec = config.model_spec().unwrap();
    let (mut gap, mut count) = (0.0, 0);
    for rep in 0..50 {
        let (table, truth) = generate_dataset(&config, 1000 + rep).unwrap();
        let mixed = fit_mixed(&table, &spec).unwrap();
        let oracle = run_oracle(&table, &truth, &spec).unwrap();
        assert_eq!(oracle.coefficient_names, mixed.coefficient_names);
        for j in 0..mixed.n_coefficients() {
            gap += (mixed.beta_hat[j] - oracle.beta_hat[j]).abs() / mixed.base_se[j];
            count += 1;
        }
    }
    let mean_gap = gap / count as f64;
    assert!(mean_gap < 0.5, "mean gap {mean_gap} SE");
}

fn scaled(table: &ObservationTable, col: usize, c: f64) -> ObservationTable {
    let mut x = table.x().clone();
    x.column_mut(col).scale_mut(c);
    ObservationTable::new(table.y().to_vec(), table.columns().to_vec(), x, table.factors().to_vec()).unwrap()
}

fn fitted_means(table: &ObservationTable, beta: &[f64]) -> Vec<f64> {
    (0..table.n())
        .map(|i| quasiboot::logistic((0..beta.len()).map(|j| table.x()[(i, j)] * beta[j]).sum()))
        .collect()
}

#[test]
fn covariate_scaling_rescales_coefficient() {
    let config = SimConfig { rows: 400, levels: vec![20], ..sim_config(false) };
    let (table, _) = generate_dataset(&config, 5).unwrap();
    for spec in [config.model_spec().unwrap(), config.model_spec().unwrap().without_random()] {
        let a = quasiboot::fit(&table, &spec).unwrap();
        let t2 = scaled(&table, 2, 10.0);
        let b = quasiboot::fit(&t2, &spec).unwrap();
        assert!((b.beta_hat[2] * 10.0 - a.beta_hat[2]).abs() < 1e-4 * a.base_se[2]);
        let (ma, mb) = (fitted_means(&table, &a.beta_hat), fitted_means(&t2, &b.beta_hat));
        assert!(ma.iter().zip(&mb).all(|(u, v)| (u - v).abs() < 1e-5));
    }
}

#[test]
fn duplicating_rows_shrinks_standard_errors() {
    let mut r = rng(8);
    let x = random_design(&mut r, 60, 3);
    let y: Vec<f64> = (0..60).map(|_| r.random_range(0.0..1.0)).collect();
    let spec = ModelSpec::from_names(&covariates(3), &[] as &[&str]).unwrap();
    let once = fit_fixed(&table_from(y.clone(), &x, vec![]), &spec).unwrap();
    let x2 = nalgebra::DMatrix::from_fn(120, 3, |i, j| x[(i % 60, j)]);
    let y2: Vec<f64> = (0..120).map(|i| y[i % 60]).collect();
    let twice = fit_fixed(&table_from(y2, &x2, vec![]), &spec).unwrap();
    for j in 0..3 {
        let ratio = twice.base_se[j] / once.base_se[j];
        assert!((0.65..=0.75).contains(&ratio), "ratio {ratio}");
        assert!((twice.beta_hat[j] - once.beta_hat[j]).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_outcomes_match_logistic_regression(seed in 0u64..10_000, n in 12usize..60) {
        let mut r = rng(seed);
        let x = random_design(&mut r, n, 3);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.3 + 0.8 * x[(i, 1)] - 0.5 * x[(i, 2)];
                f64::from(u8::from(r.random::<f64>() < 1.0 / (1.0 + (-eta).exp())))
            })
            .collect();
        let spec = ModelSpec::from_names(&covariates(3), &[] as &[&str]).unwrap();
        let table = table_from(y.clone(), &x, vec![]);
        // Separated draws have no finite optimum; both methods must agree otherwise.
        if let Ok(f) = fit_fixed(&table, &spec) {
            let reference = irls(&y, &x);
            for (j, (b, r)) in f.beta_hat.iter().zip(&reference).enumerate() {
                prop_assert!((b - r).abs() < 1e-6, "coef {} got {} want {}", j, b, r);
            }
        }
    }
}
