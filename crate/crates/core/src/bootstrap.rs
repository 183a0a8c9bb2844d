//! Bootstrap refits and bootstrap-t intervals and p-values.
//!
//! Each replicate resamples the data (by default whole levels of the
//! highest-entropy random factor), refits the same model, and stores the
//! refit's coefficients and base standard errors. For coefficient `j`,
//! `t* = (beta*_j - beta_hat_j) / se*_j`, and with `q_a` the `a` quantile of
//! the `t*` values the interval is
//! `(beta_hat - q_{1-alpha/2} se, beta_hat - q_{alpha/2} se)`.
//! The p-value is the largest `alpha` whose interval still contains zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Workers};
use crate::fit::{fit, fit_from, FitResult};
use crate::model::{GroupingFactor, ModelSpec, ObservationTable};
use crate::resample::{select_bootstrap_factor, ResampleMode, ResamplePlan};

/// Bootstrap p-values below this are flagged as limited by resample granularity.
pub const GRANULARITY_THRESHOLD: f64 = 0.05;

/// Smallest accepted number of resamples.
pub const MIN_RESAMPLES: usize = 100;

/// Resample count recommended for published results.
pub const DEFAULT_RESAMPLES: usize = 15_000;

/// Name of the synthetic per-row factor used when the table has no factors.
pub const ROW_FACTOR: &str = ".row";

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Abort when more than this fraction of replicates fail.
    pub max_failure_fraction: f64,
    pub workers: Workers,
    pub mode: ResampleMode,
    /// Overrides the entropy-based factor choice (block mode) or names the
    /// two crossed factors (pigeonhole mode).
    pub factors: Vec<String>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            alpha: 0.05,
            seed: 0,
            max_failure_fraction: 0.01,
            workers: Workers::Auto,
            mode: ResampleMode::SingleFactorBlock,
            factors: Vec::new(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples < MIN_RESAMPLES {
            return Err(Error::InvalidConfig(format!(
                "at least {MIN_RESAMPLES} resamples required, got {}",
                self.resamples
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.max_failure_fraction) {
            return Err(Error::InvalidConfig(format!(
                "max failure fraction must be in [0, 1), got {}",
                self.max_failure_fraction
            )));
        }
        Ok(())
    }
}

/// One successful refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: u64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: u64,
    pub reason: String,
}

/// Settings that determine a bootstrap run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub seed: u64,
    pub mode: ResampleMode,
    pub factors: Vec<String>,
    pub max_failure_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutput {
    pub settings: BootstrapSettings,
    pub coefficient_names: Vec<String>,
    pub replicates: Vec<Replicate>,
    pub failures: Vec<ReplicateFailure>,
}

impl BootstrapOutput {
    pub fn successful(&self) -> usize {
        self.replicates.len()
    }

    pub fn failed(&self) -> usize {
        self.failures.len()
    }
}

/// Factors to resample over, resolved from the config, the model, and the table.
fn resolve_factors(table: &ObservationTable, spec: &ModelSpec, config: &BootstrapConfig) -> Result<Vec<String>> {
    match config.mode {
        ResampleMode::SingleFactorBlock => {
            if let [f] = config.factors.as_slice() {
                if table.factor(f).is_none() {
                    return Err(Error::InvalidConfig(format!("unknown bootstrap factor `{f}`")));
                }
                return Ok(vec![f.clone()]);
            }
            if config.factors.len() > 1 {
                return Err(Error::InvalidConfig("block resampling takes one factor".into()));
            }
            let candidates: Vec<String> = if spec.is_mixed() {
                spec.random_intercept_factors().to_vec()
            } else {
                table.factors().iter().map(|f| f.name().to_string()).collect()
            };
            if candidates.is_empty() {
                return Ok(vec![ROW_FACTOR.to_string()]);
            }
            Ok(vec![select_bootstrap_factor(table, &candidates)?])
        }
        ResampleMode::PigeonholeTwoWay => {
            let fs = if config.factors.is_empty() {
                spec.random_intercept_factors().to_vec()
            } else {
                config.factors.clone()
            };
            if fs.len() != 2 {
                return Err(Error::InvalidConfig(format!(
                    "pigeonhole resampling needs two factors, got {}",
                    fs.len()
                )));
            }
            for f in &fs {
                if table.factor(f).is_none() {
                    return Err(Error::InvalidConfig(format!("unknown bootstrap factor `{f}`")));
                }
            }
            Ok(fs)
        }
    }
}

fn with_row_factor(table: &ObservationTable) -> Result<ObservationTable> {
    let n = table.n();
    let f = GroupingFactor::new(ROW_FACTOR, (0..n).map(|i| i.to_string()).collect(), (0..n).collect())?;
    let mut factors = table.factors().to_vec();
    factors.push(f);
    ObservationTable::new(table.y().to_vec(), table.columns().to_vec(), table.x().clone(), factors)
}

/// Fits the base model, then runs the bootstrap.
pub fn run_bootstrap(table: &ObservationTable, spec: &ModelSpec, config: &BootstrapConfig) -> Result<BootstrapOutput> {
    config.validate()?;
    let base = fit(table, spec)?;
    run_bootstrap_with_base(table, spec, &base, config)
}

/// Runs the bootstrap given the base fit of `spec` on `table`. Each refit
/// starts its optimizer at the base estimates.
pub fn run_bootstrap_with_base(
    table: &ObservationTable,
    spec: &ModelSpec,
    base: &FitResult,
    config: &BootstrapConfig,
) -> Result<BootstrapOutput> {
    config.validate()?;
    let factors = resolve_factors(table, spec, config)?;
    let owned;
    let source = if factors == [ROW_FACTOR] && table.factor(ROW_FACTOR).is_none() {
        owned = with_row_factor(table)?;
        &owned
    } else {
        table
    };
    let p = spec.n_coefficients();

    let outcomes = map_indexed(config.resamples, config.workers, |r| {
        let index = r as u64;
        let plan = ResamplePlan {
            mode: config.mode,
            factors: factors.clone(),
            seed: config.seed,
            replicate_index: index,
        };
        let refit = plan.apply(source).and_then(|rs| fit_from(&rs.table, spec, base));
        match refit {
            Ok(f) if se_usable(&f) => Ok(Replicate {
                index,
                beta: f.beta_hat,
                se: f.base_se,
            }),
            Ok(_) => Err(ReplicateFailure {
                index,
                reason: "zero or non-finite standard error".into(),
            }),
            Err(e) => Err(ReplicateFailure {
                index,
                reason: e.to_string(),
            }),
        }
    });

    let mut replicates = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => {
                debug_assert_eq!(r.beta.len(), p);
                replicates.push(r)
            }
            Err(f) => failures.push(f),
        }
    }
    let limit = config.max_failure_fraction;
    if failures.len() as f64 > limit * config.resamples as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: config.resamples,
            limit: 100.0 * limit,
            first_reason: failures[0].reason.clone(),
        });
    }
    Ok(BootstrapOutput {
        settings: BootstrapSettings {
            resamples: config.resamples,
            seed: config.seed,
            mode: config.mode,
            factors,
            max_failure_fraction: config.max_failure_fraction,
        },
        coefficient_names: spec.fixed_columns().to_vec(),
        replicates,
        failures,
    })
}

fn se_usable(f: &FitResult) -> bool {
    f.base_se.iter().all(|s| s.is_finite() && *s > 0.0) && f.beta_hat.iter().all(|b| b.is_finite())
}

/// Bootstrap t statistics for coefficient `j`, one per usable replicate.
pub fn t_statistics(output: &BootstrapOutput, base: &FitResult, j: usize) -> Result<Vec<f64>> {
    if j >= base.n_coefficients() {
        return Err(Error::DimensionMismatch {
            what: "coefficient index",
            expected: base.n_coefficients(),
            found: j,
        });
    }
    let beta = base.beta_hat[j];
    let ts: Vec<f64> = output
        .replicates
        .iter()
        .filter(|r| r.se[j].is_finite() && r.se[j] > 0.0)
        .map(|r| (r.beta[j] - beta) / r.se[j])
        .collect();
    if ts.is_empty() {
        return Err(Error::InvalidData("no usable bootstrap replicates".into()));
    }
    Ok(ts)
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidData("quantile of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidData("NaN in sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        v[lo] + frac * (v[lo + 1] - v[lo])
    }
}

/// Linearly interpolated order statistic: with sorted `v_1..v_m` and
/// `h = (m - 1) q + 1`, returns `v_floor(h) + (h - floor(h)) (v_floor(h)+1 - v_floor(h))`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidData(format!("quantile level {q} outside [0, 1]")));
    }
    Ok(quantile_sorted(&sorted(values)?, q))
}

/// Inverse of [`quantile`]: piecewise-linear empirical CDF through
/// `(v_k, (k - 1) / (m - 1))`, with runs of tied values mapped to the
/// midpoint of their positions.
fn interpolated_cdf(v: &[f64], t: f64) -> f64 {
    let m = v.len();
    let first = v.partition_point(|&x| x < t);
    let past = v.partition_point(|&x| x <= t);
    if past > first {
        // t equals v[first..past]
        if m == 1 {
            return 0.5;
        }
        let mid = (first + past - 1) as f64 / 2.0;
        return mid / (m - 1) as f64;
    }
    if first == 0 {
        return 0.0;
    }
    if first == m {
        return 1.0;
    }
    let (a, b) = (v[first - 1], v[first]);
    ((first - 1) as f64 + (t - a) / (b - a)) / (m - 1) as f64
}

/// Bootstrap-t interval `(estimate - q_{1-alpha/2} se, estimate - q_{alpha/2} se)`.
pub fn confidence_interval(estimate: f64, se: f64, ts: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let v = sorted(ts)?;
    let lo_q = quantile_sorted(&v, alpha / 2.0);
    let hi_q = quantile_sorted(&v, 1.0 - alpha / 2.0);
    Ok((estimate - hi_q * se, estimate - lo_q * se))
}

/// Largest `alpha` at which the bootstrap-t interval contains zero, floored
/// at `1 / m`.
pub fn p_value(estimate: f64, se: f64, ts: &[f64]) -> Result<f64> {
    let v = sorted(ts)?;
    let t0 = estimate / se;
    let f = interpolated_cdf(&v, t0);
    let p = 2.0 * f.min(1.0 - f);
    Ok(p.clamp(1.0 / v.len() as f64, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInference {
    pub name: String,
    pub estimate: f64,
    pub exp_estimate: f64,
    pub base_se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    /// `p_value` below 0.05: resample granularity dominates its accuracy.
    pub granularity_limited: bool,
    /// `t*` quantiles at `alpha / 2` and `1 - alpha / 2`.
    pub t_quantile_lower: f64,
    pub t_quantile_upper: f64,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub alpha: f64,
    pub resamples: usize,
    pub effective_resamples: usize,
    pub failures: usize,
    pub coefficients: Vec<CoefficientInference>,
}

impl InferenceReport {
    /// Combines the base fit with bootstrap output.
    pub fn build(base: &FitResult, output: &BootstrapOutput, alpha: f64) -> Result<Self> {
        if output.coefficient_names != base.coefficient_names {
            return Err(Error::InvalidData(
                "bootstrap output and base fit have different coefficients".into(),
            ));
        }
        let coefficients = (0..base.n_coefficients())
            .map(|j| {
                let ts = t_statistics(output, base, j)?;
                let v = sorted(&ts)?;
                let (estimate, se) = (base.beta_hat[j], base.base_se[j]);
                let (ci_lower, ci_upper) = confidence_interval(estimate, se, &v, alpha)?;
                let p = p_value(estimate, se, &v)?;
                Ok(CoefficientInference {
                    name: base.coefficient_names[j].clone(),
                    estimate,
                    exp_estimate: estimate.exp(),
                    base_se: se,
                    ci_lower,
                    ci_upper,
                    p_value: p,
                    granularity_limited: p < GRANULARITY_THRESHOLD,
                    t_quantile_lower: quantile_sorted(&v, alpha / 2.0),
                    t_quantile_upper: quantile_sorted(&v, 1.0 - alpha / 2.0),
                    n_t: v.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            alpha,
            resamples: output.settings.resamples,
            effective_resamples: output.successful(),
            failures: output.failed(),
            coefficients,
        })
    }
}
