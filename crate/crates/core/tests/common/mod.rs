//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use quasiboot::{GroupingFactor, ObservationTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `sum y log G(eta) + (1 - y) log(1 - G(eta))`, evaluated term by term.
pub fn bernoulli_form(y: &[f64], x: &DMatrix<f64>, beta: &[f64]) -> f64 {
    (0..y.len())
        .map(|i| {
            let eta: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
            let g = 1.0 / (1.0 + (-eta).exp());
            y[i] * g.ln() + (1.0 - y[i]) * (1.0 - g).ln()
        })
        .sum()
}

/// Maximizes a two-parameter function by repeated grid refinement.
pub fn grid_argmax(f: impl Fn(f64, f64) -> f64, center: (f64, f64), half_width: f64) -> (f64, f64) {
    let (mut c, mut w) = (center, half_width);
    let steps = 40;
    while w > 1e-7 {
        let mut best = (f64::NEG_INFINITY, c);
        for a in 0..=2 * steps {
            for b in 0..=2 * steps {
                let p = (
                    c.0 + w * (a as f64 - steps as f64) / steps as f64,
                    c.1 + w * (b as f64 - steps as f64) / steps as f64,
                );
                let v = f(p.0, p.1);
                if v > best.0 {
                    best = (v, p);
                }
            }
        }
        c = best.1;
        w *= 10.0 / steps as f64;
    }
    c
}

/// Logistic regression by iteratively reweighted least squares.
pub fn irls(y: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = x * &beta;
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w = mu.map(|m| m * (1.0 - m));
        let z = DVector::from_fn(y.len(), |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
        let xtw = DMatrix::from_fn(p, y.len(), |j, i| x[(i, j)] * w[i]);
        let next = (&xtw * x).lu().solve(&(&xtw * z)).expect("nonsingular");
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < 1e-13 {
            break;
        }
    }
    beta.as_slice().to_vec()
}

/// Intercept plus `p - 1` uniform covariates.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Table from an intercept-first design with covariates named `x1`, `x2`, ...
pub fn table_from(y: Vec<f64>, x: &DMatrix<f64>, factors: Vec<GroupingFactor>) -> ObservationTable {
    let cols = (1..x.ncols())
        .map(|j| (format!("x{j}"), x.column(j).iter().copied().collect()))
        .collect();
    ObservationTable::with_intercept(y, cols, factors).unwrap()
}

pub fn covariates(p: usize) -> Vec<String> {
    (1..p).map(|j| format!("x{j}")).collect()
}
