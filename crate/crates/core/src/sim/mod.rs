//! Simulation study: generate data with known truth, fit base, bootstrap and
//! oracle models, and tabulate coverage and interval widths.

mod generate;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap_with_base, BootstrapConfig, InferenceReport};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Workers};
use crate::fit::{fit, fit_fixed_with_offset, FitResult};
use crate::model::{ModelSpec, ObservationTable};
use crate::resample::ResampleMode;
use crate::rng::derive_seed;
use crate::stats::{binomial_band, normal_quantile};

pub use generate::{covariate_names, factor_names, generate_dataset, BetaNoiseParams, Truth};

const BOOTSTRAP_TAG: u64 = 0x626f_6f74;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseModel {
    /// Beta outcomes with variance `rho^2 mu (1 - mu)`.
    Beta { rho: f64 },
    /// `mu + U(-w, w)` with `w = min(mu, 1 - mu, 0.25)`.
    Uniform,
}

/// One cell of the factorial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rows: usize,
    /// Covariates, not counting the intercept.
    pub n_fixed: usize,
    /// Level count of each random factor (one or two factors).
    pub levels: Vec<usize>,
    /// Two factors cross each other; otherwise the finer one nests in the coarser.
    pub crossed: bool,
    pub effects_null: bool,
    pub noise: NoiseModel,
    pub replicates: usize,
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub random_effect_variance: f64,
    /// Standard deviation of drawn fixed effects (and of the intercept).
    pub fixed_effect_sd: f64,
}

impl SimConfig {
    /// Scaled-down null design: 1000 rows, 3 covariates, one 40-level factor.
    pub fn desk(rho: f64) -> Self {
        Self {
            rows: 1000,
            n_fixed: 3,
            levels: vec![40],
            crossed: false,
            effects_null: true,
            noise: NoiseModel::Beta { rho },
            replicates: 200,
            resamples: 1000,
            alpha: 0.05,
            seed: 1,
            random_effect_variance: 1.0,
            fixed_effect_sd: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rows == 0 || self.replicates == 0 || self.resamples == 0 {
            return bad("rows, replicates and resamples must be positive".into());
        }
        if self.levels.is_empty() || self.levels.len() > 2 {
            return bad(format!("one or two random factors required, got {}", self.levels.len()));
        }
        if let Some(k) = self.levels.iter().find(|&&k| k < 2 || k > self.rows) {
            return bad(format!("level count {k} must be between 2 and the row count"));
        }
        if let NoiseModel::Beta { rho } = self.noise {
            if !(rho > 0.0 && rho < 1.0) {
                return bad(format!("rho must be in (0, 1), got {rho}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if !(self.random_effect_variance >= 0.0 && self.fixed_effect_sd >= 0.0) {
            return bad("variances must be non-negative".into());
        }
        replicate_bootstrap_config(self, 0, Workers::Auto).validate()
    }

    pub fn rho(&self) -> Option<f64> {
        match self.noise {
            NoiseModel::Beta { rho } => Some(rho),
            NoiseModel::Uniform => None,
        }
    }

    pub fn min_levels(&self) -> usize {
        self.levels.iter().copied().min().unwrap_or(0)
    }

    /// Stable identifier for output tables.
    pub fn cell_id(&self) -> String {
        let levels: Vec<String> = self.levels.iter().map(usize::to_string).collect();
        let design = if self.levels.len() == 2 {
            if self.crossed {
                "crossed"
            } else {
                "nested"
            }
        } else {
            "single"
        };
        let noise = match self.noise {
            NoiseModel::Beta { rho } => format!("beta{rho}"),
            NoiseModel::Uniform => "uniform".into(),
        };
        format!(
            "n{}-p{}-k{}-{}-{}-{}",
            self.rows,
            self.n_fixed,
            levels.join("x"),
            design,
            if self.effects_null { "null" } else { "effects" },
            noise
        )
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_names(&covariate_names(self.n_fixed), &factor_names(self.levels.len()))
    }

    /// Full factorial grid over the given noise models.
    pub fn grid(noise: &[NoiseModel], replicates: usize, resamples: usize, seed: u64) -> Vec<Self> {
        let mut cells = Vec::new();
        for &rows in &[1000, 2000] {
            for &n_fixed in &[3, 10] {
                for &effects_null in &[true, false] {
                    for &noise in noise {
                        for &k in &[10, 20, 40, 80] {
                            let base = Self {
                                rows,
                                n_fixed,
                                levels: vec![k],
                                crossed: false,
                                effects_null,
                                noise,
                                replicates,
                                resamples,
                                alpha: 0.05,
                                seed,
                                random_effect_variance: 1.0,
                                fixed_effect_sd: 0.5,
                            };
                            for &k2 in &[10, 20, 40, 80] {
                                for crossed in [true, false] {
                                    if !crossed && k == k2 {
                                        continue;
                                    }
                                    cells.push(Self {
                                        levels: vec![k, k2],
                                        crossed,
                                        ..base.clone()
                                    });
                                }
                            }
                            cells.push(base);
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Generation choices that are not pinned down by the model, recorded with
/// every result so runs can be compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetadata {
    pub covariates: String,
    pub random_effect_variance: f64,
    pub fixed_effect_sd: f64,
    pub uniform_noise: String,
    pub nesting: String,
    pub pooled_rates: String,
}

impl SimMetadata {
    fn for_config(config: &SimConfig) -> Self {
        Self {
            covariates: "ceil(p/2) correlated normal (random eigenvectors, eigenvalues U[0.2, 1.8]) \
                         + remaining U(-sqrt3, sqrt3)"
                .into(),
            random_effect_variance: config.random_effect_variance,
            fixed_effect_sd: config.fixed_effect_sd,
            uniform_noise: "mu + U(-w, w), w = min(mu, 1 - mu, 0.25)".into(),
            nesting: "fine level l sits in coarse level l mod K_coarse".into(),
            pooled_rates: "non-intercept coefficients; band at n = replicate count".into(),
        }
    }
}

/// Everything fitted on one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub truth_beta: Vec<f64>,
    pub base: FitResult,
    pub bootstrap: InferenceReport,
    pub oracle: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRates {
    pub name: String,
    pub bootstrap_rejection: f64,
    pub base_rejection: f64,
    pub mean_width_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: String,
    pub rho: Option<f64>,
    /// Coverage is tabulated against the factor with fewer levels.
    pub min_levels: usize,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    pub coefficients: Vec<CoefficientRates>,
    pub pooled_bootstrap_rejection: f64,
    pub pooled_base_rejection: f64,
    pub pooled_bootstrap_coverage: f64,
    /// Central 95% range of the rejection rate of a correct `alpha`-level
    /// test over `replicates_ok` replicates.
    pub band_lower: f64,
    pub band_upper: f64,
    pub mean_width_ratio: f64,
    /// Mean `|beta_mixed - beta_oracle| / se_base` over non-intercept coefficients.
    pub oracle_gap_in_se: Option<f64>,
}

/// Bootstrap interval width over the base Wald interval width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRecord {
    pub rho: Option<f64>,
    pub ratio: f64,
    pub cell_id: String,
    pub replicate: u64,
    pub coefficient: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub metadata: SimMetadata,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
    pub summary: CellSummary,
    pub widths: Vec<WidthRecord>,
}

/// Oracle fit: fixed effects only, with the true `z'b` as a known offset.
pub fn run_oracle(table: &ObservationTable, truth: &Truth, spec: &ModelSpec) -> Result<FitResult> {
    fit_fixed_with_offset(table, &spec.without_random(), &truth.offset)
}

/// Bootstrap settings used for `replicate` of `config`.
pub fn replicate_bootstrap_config(config: &SimConfig, replicate: u64, workers: Workers) -> BootstrapConfig {
    BootstrapConfig {
        resamples: config.resamples,
        alpha: config.alpha,
        seed: derive_seed(derive_seed(config.seed, BOOTSTRAP_TAG), replicate),
        max_failure_fraction: 0.01,
        workers,
        mode: ResampleMode::SingleFactorBlock,
        factors: Vec::new(),
    }
}

/// Generates, fits and bootstraps a single replicate.
pub fn run_replicate(config: &SimConfig, replicate: u64, workers: Workers) -> Result<ReplicateRecord> {
    let spec = config.model_spec()?;
    let (table, truth) = generate_dataset(config, replicate)?;
    let base = fit(&table, &spec)?;
    let boot_config = replicate_bootstrap_config(config, replicate, workers);
    let output = run_bootstrap_with_base(&table, &spec, &base, &boot_config)?;
    let bootstrap = InferenceReport::build(&base, &output, config.alpha)?;
    let oracle = run_oracle(&table, &truth, &spec).ok();
    Ok(ReplicateRecord {
        replicate,
        truth_beta: truth.beta,
        base,
        bootstrap,
        oracle,
    })
}

/// Runs every replicate of one cell. Replicates are spread over `workers`;
/// each bootstrap runs sequentially inside its replicate.
pub fn run_cell(config: &SimConfig, workers: Workers) -> Result<SimResult> {
    config.validate()?;
    let outcomes = map_indexed(config.replicates, workers, |r| {
        run_replicate(config, r as u64, Workers::Fixed(1)).map_err(|e| ReplicateFailure {
            replicate: r as u64,
            reason: e.to_string(),
        })
    });
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    if records.is_empty() {
        return Err(Error::NoSuccessfulReplicates {
            cell: config.cell_id(),
            first_reason: failures.first().map_or_else(|| "no replicates requested".into(), |f| f.reason.clone()),
        });
    }
    let (summary, widths) = evaluate_cell(config, &records, failures.len())?;
    Ok(SimResult {
        config: config.clone(),
        metadata: SimMetadata::for_config(config),
        records,
        failures,
        summary,
        widths,
    })
}

/// Runs several cells as independent tasks; results follow input order.
pub fn run_grid(configs: &[SimConfig], workers: Workers) -> Vec<Result<SimResult>> {
    map_indexed(configs.len(), workers, |i| run_cell(&configs[i], workers))
}

/// Rejection rates, coverage and width ratios for one cell. A test rejects
/// when its interval excludes the true coefficient.
pub fn evaluate_cell(
    config: &SimConfig,
    records: &[ReplicateRecord],
    failed: usize,
) -> Result<(CellSummary, Vec<WidthRecord>)> {
    let Some(first) = records.first() else {
        return Err(Error::NoSuccessfulReplicates {
            cell: config.cell_id(),
            first_reason: "none recorded".into(),
        });
    };
    let names = &first.base.coefficient_names;
    let p = names.len();
    let z = normal_quantile(1.0 - config.alpha / 2.0);
    let cell_id = config.cell_id();
    let m = records.len() as f64;

    let mut boot_rej = vec![0usize; p];
    let mut base_rej = vec![0usize; p];
    let mut width_sum = vec![0.0; p];
    let mut widths = Vec::new();
    let mut oracle_gap = (0.0, 0usize);
    for r in records {
        for (j, c) in r.bootstrap.coefficients.iter().enumerate() {
            let truth = r.truth_beta[j];
            if truth < c.ci_lower || truth > c.ci_upper {
                boot_rej[j] += 1;
            }
            let (b, se) = (r.base.beta_hat[j], r.base.base_se[j]);
            if (b - truth).abs() > z * se {
                base_rej[j] += 1;
            }
            let ratio = (c.ci_upper - c.ci_lower) / (2.0 * z * se);
            width_sum[j] += ratio;
            if j > 0 {
                widths.push(WidthRecord {
                    rho: config.rho(),
                    ratio,
                    cell_id: cell_id.clone(),
                    replicate: r.replicate,
                    coefficient: names[j].clone(),
                });
                if let Some(o) = &r.oracle {
                    oracle_gap.0 += (b - o.beta_hat[j]).abs() / se;
                    oracle_gap.1 += 1;
                }
            }
        }
    }

    let coefficients = (0..p)
        .map(|j| CoefficientRates {
            name: names[j].clone(),
            bootstrap_rejection: boot_rej[j] as f64 / m,
            base_rejection: base_rej[j] as f64 / m,
            mean_width_ratio: width_sum[j] / m,
        })
        .collect();
    let slopes = (p - 1).max(1) as f64;
    let pooled = |v: &[usize]| v[1..].iter().sum::<usize>() as f64 / (m * slopes);
    let pooled_bootstrap_rejection = pooled(&boot_rej);
    let (band_lower, band_upper) = binomial_band(records.len(), config.alpha, 0.95);
    let summary = CellSummary {
        cell_id,
        rho: config.rho(),
        min_levels: config.min_levels(),
        replicates_ok: records.len(),
        replicates_failed: failed,
        coefficients,
        pooled_bootstrap_rejection,
        pooled_base_rejection: pooled(&base_rej),
        pooled_bootstrap_coverage: 1.0 - pooled_bootstrap_rejection,
        band_lower,
        band_upper,
        mean_width_ratio: width_sum[1..].iter().sum::<f64>() / (m * slopes),
        oracle_gap_in_se: (oracle_gap.1 > 0).then(|| oracle_gap.0 / oracle_gap.1 as f64),
    };
    Ok((summary, widths))
}
