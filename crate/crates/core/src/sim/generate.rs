use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{NoiseModel, SimConfig};
use crate::error::{Error, Result};
use crate::model::{logistic, GroupingFactor, ObservationTable};
use crate::rng::{derive_seed, stream_rng};

const DATA_TAG: u64 = 0x6461_7461;

/// Beta distribution with mean `mu` and variance `rho^2 mu (1 - mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaNoiseParams {
    pub mu: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl BetaNoiseParams {
    pub fn new(mu: f64, rho: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Infeasible(format!("beta noise mean {mu} outside (0, 1)")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Infeasible(format!("rho {rho} outside (0, 1)")));
        }
        let sigma2 = rho * rho * mu * (1.0 - mu);
        let alpha = mu * mu * (1.0 - mu) / sigma2 - mu;
        let beta = alpha * (1.0 / mu - 1.0);
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Infeasible(format!(
                "beta shape parameters ({alpha}, {beta}) at mu = {mu}, rho = {rho}"
            )));
        }
        Ok(Self { mu, rho, alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let draw = Beta::new(self.alpha, self.beta)
            .map(|d| d.sample(rng))
            .unwrap_or(f64::NAN);
        if draw.is_finite() {
            draw.clamp(0.0, 1.0)
        } else {
            // Shapes so small the sampler underflows: the law is Bernoulli(mu).
            f64::from(u8::from(rng.random::<f64>() < self.mu))
        }
    }
}

/// Known generating values for one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Intercept first, then one per covariate.
    pub beta: Vec<f64>,
    /// One vector of level effects per factor.
    pub random_effects: Vec<Vec<f64>>,
    pub rho: Option<f64>,
    /// Per-row sum of random effects, `z_i' b`.
    pub offset: Vec<f64>,
}

pub fn covariate_names(n_fixed: usize) -> Vec<String> {
    (1..=n_fixed).map(|j| format!("x{j}")).collect()
}

pub fn factor_names(n_factors: usize) -> Vec<String> {
    (1..=n_factors).map(|j| format!("g{j}")).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Cholesky factor of a random correlation matrix `D Q L Q' D`, where `Q`
/// is a random orthogonal matrix and `L` has eigenvalues uniform on [0.2, 1.8].
fn random_correlation_factor(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| normal(rng));
    let q = g.qr().q();
    let eig: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.8)).collect();
    let s = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig)) * q.transpose();
    let d: Vec<f64> = (0..k).map(|i| 1.0 / s[(i, i)].sqrt()).collect();
    let c = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { d[i] * s[(i, j)] * d[j] });
    c.cholesky().expect("positive-definite by construction").l()
}

fn covariates(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n_normal = p.div_ceil(2);
    let mut cols = vec![Vec::with_capacity(n); p];
    let l = (n_normal > 0).then(|| random_correlation_factor(n_normal, rng));
    let half_width = 3f64.sqrt();
    for _ in 0..n {
        if let Some(l) = &l {
            let z = nalgebra::DVector::from_fn(n_normal, |_, _| normal(rng));
            let x = l * z;
            for (j, v) in x.iter().enumerate() {
                cols[j].push(*v);
            }
        }
        for col in cols.iter_mut().skip(n_normal) {
            col.push(rng.random_range(-half_width..half_width));
        }
    }
    cols
}

fn assignments(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = config.rows;
    match config.levels.as_slice() {
        [k] => vec![(0..n).map(|i| i % k).collect()],
        [ka, kb] if config.crossed => {
            let a = (0..n).map(|i| i % ka).collect();
            let mut b: Vec<usize> = (0..n).map(|i| i % kb).collect();
            b.shuffle(rng);
            vec![a, b]
        }
        [ka, kb] => {
            // Each level of the finer factor sits inside one coarse level.
            let (fine, coarse) = (*ka.max(kb), *ka.min(kb));
            let f: Vec<usize> = (0..n).map(|i| i % fine).collect();
            let c: Vec<usize> = f.iter().map(|l| l % coarse).collect();
            if ka >= kb {
                vec![f, c]
            } else {
                vec![c, f]
            }
        }
        _ => unreachable!("validated"),
    }
}

/// Draws one data set for replicate `replicate` of `config`.
pub fn generate_dataset(config: &SimConfig, replicate: u64) -> Result<(ObservationTable, Truth)> {
    config.validate()?;
    let mut rng = stream_rng(derive_seed(config.seed, DATA_TAG), replicate);
    let n = config.rows;
    let p = config.n_fixed;

    let x = covariates(n, p, &mut rng);
    let mut beta = vec![config.fixed_effect_sd * normal(&mut rng)];
    for _ in 0..p {
        let b = config.fixed_effect_sd * normal(&mut rng);
        beta.push(if config.effects_null { 0.0 } else { b });
    }

    let assign = assignments(config, &mut rng);
    let sd = config.random_effect_variance.sqrt();
    let random_effects: Vec<Vec<f64>> = config
        .levels
        .iter()
        .map(|&k| (0..k).map(|_| sd * normal(&mut rng)).collect())
        .collect();
    let offset: Vec<f64> = (0..n)
        .map(|i| assign.iter().zip(&random_effects).map(|(a, b)| b[a[i]]).sum())
        .collect();

    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let eta = beta[0] + (0..p).map(|j| x[j][i] * beta[j + 1]).sum::<f64>() + offset[i];
        let mu = logistic(eta);
        y.push(match config.noise {
            NoiseModel::Beta { rho } => BetaNoiseParams::new(mu, rho)?.sample(&mut rng),
            NoiseModel::Uniform => {
                let w = mu.min(1.0 - mu).min(0.25);
                (mu + rng.random_range(-1.0..=1.0) * w).clamp(0.0, 1.0)
            }
        });
    }

    let factors = factor_names(config.levels.len())
        .into_iter()
        .zip(config.levels.iter().zip(assign))
        .map(|(name, (&k, a))| GroupingFactor::new(name, (0..k).map(|l| format!("L{l}")).collect(), a))
        .collect::<Result<Vec<_>>>()?;
    let table = ObservationTable::with_intercept(
        y,
        covariate_names(p).into_iter().zip(x).collect(),
        factors,
    )?;
    let rho = match config.noise {
        NoiseModel::Beta { rho } => Some(rho),
        NoiseModel::Uniform => None,
    };
    Ok((
        table,
        Truth {
            beta,
            random_effects,
            rho,
            offset,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, variance};

    #[test]
    fn beta_params_example() {
        let b = BetaNoiseParams::new(0.5, 0.5f64.sqrt()).unwrap();
        assert!((b.alpha - 0.5).abs() < 1e-12 && (b.beta - 0.5).abs() < 1e-12);
        assert!((b.mean() - 0.5).abs() < 1e-12);
        assert!((b.variance() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn beta_params_analytic_moments() {
        for mu in [0.02, 0.3, 0.5, 0.77, 0.99] {
            for rho in [0.1, 0.5, 0.9] {
                let b = BetaNoiseParams::new(mu, rho).unwrap();
                assert!((b.mean() - mu).abs() < 1e-12);
                let v = rho * rho * mu * (1.0 - mu);
                assert!((b.variance() - v).abs() < 1e-12 * v.max(1.0));
            }
        }
        assert!(BetaNoiseParams::new(0.5, 1.0).is_err());
        assert!(BetaNoiseParams::new(0.0, 0.5).is_err());
    }

    #[test]
    fn beta_sample_moments() {
        let mut rng = stream_rng(11, 0);
        for (mu, rho) in [(0.3, 0.6), (0.5, 0.3), (0.8, 0.9)] {
            let b = BetaNoiseParams::new(mu, rho).unwrap();
            let draws: Vec<f64> = (0..100_000).map(|_| b.sample(&mut rng)).collect();
            let v = rho * rho * mu * (1.0 - mu);
            assert!((mean(&draws) - mu).abs() / mu < 0.01, "mean at {mu}, {rho}");
            assert!((variance(&draws) - v).abs() / v < 0.01, "variance at {mu}, {rho}");
        }
    }

    #[test]
    fn rho_near_one_is_nearly_binary() {
        let mut rng = stream_rng(5, 0);
        let b = BetaNoiseParams::new(0.4, 0.999).unwrap();
        let draws: Vec<f64> = (0..20_000).map(|_| b.sample(&mut rng)).collect();
        let extreme = draws.iter().filter(|&&y| !(1e-3..=1.0 - 1e-3).contains(&y)).count();
        assert!(extreme as f64 / draws.len() as f64 > 0.95);
        assert!((mean(&draws) - 0.4).abs() < 0.02);
    }

    #[test]
    fn null_truth_and_shapes() {
        let config = SimConfig {
            rows: 200,
            n_fixed: 3,
            levels: vec![10, 4],
            crossed: true,
            ..SimConfig::desk(0.6)
        };
        let (table, truth) = generate_dataset(&config, 3).unwrap();
        assert_eq!(table.n(), 200);
        assert_eq!(table.columns().len(), 4);
        assert!(truth.beta[1..].iter().all(|&b| b == 0.0));
        assert_eq!(truth.random_effects[0].len(), 10);
        assert_eq!(truth.random_effects[1].len(), 4);
        assert!(table.y().iter().all(|y| (0.0..=1.0).contains(y)));
        let again = generate_dataset(&config, 3).unwrap();
        assert_eq!(table, again.0);
        assert_ne!(table, generate_dataset(&config, 4).unwrap().0);
    }

    #[test]
    fn nested_levels_sit_inside_coarse_levels() {
        let config = SimConfig {
            rows: 120,
            levels: vec![4, 12],
            crossed: false,
            ..SimConfig::desk(0.5)
        };
        let (table, _) = generate_dataset(&config, 0).unwrap();
        let coarse = table.factor("g1").unwrap();
        let fine = table.factor("g2").unwrap();
        let mut parent = vec![None; fine.n_levels()];
        for i in 0..table.n() {
            let p = parent[fine.level_of(i)].get_or_insert(coarse.level_of(i));
            assert_eq!(*p, coarse.level_of(i));
        }
    }

    #[test]
    fn uniform_noise_stays_in_unit_interval() {
        let config = SimConfig {
            noise: NoiseModel::Uniform,
            rows: 300,
            ..SimConfig::desk(0.5)
        };
        let (table, _) = generate_dataset(&config, 1).unwrap();
        assert!(table.y().iter().all(|y| (0.0..=1.0).contains(y)));
    }

    #[test]
    fn covariates_are_standardized_scale() {
        let mut rng = stream_rng(3, 0);
        let cols = covariates(20_000, 5, &mut rng);
        for c in &cols {
            assert!(mean(c).abs() < 0.05);
            assert!((variance(c) - 1.0).abs() < 0.05);
        }
    }
}
