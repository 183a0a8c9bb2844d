//! Fixed- and mixed-effects quasi-likelihood fitting.
//!
//! Standard errors come from the inverse observed information of the
//! (binary-form) quasi-likelihood. Since the Bernoulli variance `mu (1 - mu)`
//! is the largest possible variance of a `[0, 1]` outcome with mean `mu`,
//! these base standard errors are conservative for fractional data.

mod bfgs;
mod fixed;
mod laplace;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupingFactor, ModelSpec, ObservationTable};

use bfgs::BfgsOptions;
use laplace::{FactorIndex, MixedProblem};

/// Estimated variance and conditional modes of one random-intercept factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectEstimate {
    pub factor: String,
    pub variance: f64,
    /// Conditional modes `b_hat`, one per level, in the factor's level order.
    pub modes: Vec<f64>,
    /// Set when the variance collapsed onto zero.
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficient_names: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub base_se: Vec<f64>,
    pub random_effects: Vec<RandomEffectEstimate>,
    /// Quasi-log-likelihood (Laplace marginal when random effects are present).
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn n_coefficients(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn coefficient_index(&self, name: &str) -> Option<usize> {
        self.coefficient_names.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative objective change required for convergence.
    pub rel_tol: f64,
    /// Gradient max-norm required for convergence.
    pub grad_tol: f64,
    /// Starting value of every random-intercept variance.
    pub initial_variance: f64,
    /// Variances below this are tested against the zero-variance boundary.
    pub boundary_variance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-8,
            grad_tol: 1e-6,
            initial_variance: 0.25,
            boundary_variance: 1e-6,
        }
    }
}

const MIN_LOG_VARIANCE: f64 = -30.0;
const MAX_LOG_VARIANCE: f64 = 10.0;

/// Fits `spec` on `table`, with random intercepts when the spec has any.
pub fn fit(table: &ObservationTable, spec: &ModelSpec) -> Result<FitResult> {
    fit_with_options(table, spec, &FitOptions::default())
}

pub fn fit_with_options(table: &ObservationTable, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    if spec.is_mixed() {
        fit_mixed_with_options(table, spec, opts)
    } else {
        fit_fixed_inner(table, spec, None, opts)
    }
}

/// Fixed-effects quasi-likelihood fit.
pub fn fit_fixed(table: &ObservationTable, spec: &ModelSpec) -> Result<FitResult> {
    if spec.is_mixed() {
        return Err(Error::InvalidSpec(
            "fit_fixed called with random-intercept factors".into(),
        ));
    }
    fit_fixed_inner(table, spec, None, &FitOptions::default())
}

/// Fixed-effects fit with a known offset added to the linear predictor. The
/// offset is not estimated and does not appear among the coefficients.
pub fn fit_fixed_with_offset(
    table: &ObservationTable,
    spec: &ModelSpec,
    offset: &[f64],
) -> Result<FitResult> {
    if offset.len() != table.n() {
        return Err(Error::DimensionMismatch {
            what: "offset",
            expected: table.n(),
            found: offset.len(),
        });
    }
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite offset".into()));
    }
    fit_fixed_inner(table, &spec.without_random(), Some(offset), &FitOptions::default())
}

fn fit_fixed_inner(
    table: &ObservationTable,
    spec: &ModelSpec,
    offset: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    spec.validate_against(table)?;
    let x = table.design(spec)?;
    let fit = fixed::newton(table.y(), &x, offset, opts.max_iterations)?;
    Ok(FitResult {
        coefficient_names: spec.fixed_columns().to_vec(),
        base_se: standard_errors(&fit.covariance, x.ncols()),
        beta_hat: fit.beta,
        random_effects: Vec::new(),
        objective_value: fit.objective,
        converged: true,
        iterations: fit.iterations,
    })
}

fn standard_errors(cov: &DMatrix<f64>, p: usize) -> Vec<f64> {
    (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()
}

/// Random-intercept quasi-likelihood fit maximizing the Laplace marginal.
pub fn fit_mixed(table: &ObservationTable, spec: &ModelSpec) -> Result<FitResult> {
    fit_mixed_with_options(table, spec, &FitOptions::default())
}

pub fn fit_mixed_with_options(
    table: &ObservationTable,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_mixed_inner(table, spec, opts, None)
}

/// Fits `spec` starting the optimizer at the estimates of `reference`, a fit
/// of the same model on related data (the base fit, for bootstrap refits).
/// Converges to the same optimum as [`fit`] within tolerance, usually in
/// fewer iterations.
pub fn fit_from(table: &ObservationTable, spec: &ModelSpec, reference: &FitResult) -> Result<FitResult> {
    if !spec.is_mixed() {
        return fit(table, spec);
    }
    let same_factors = reference.random_effects.len() == spec.random_intercept_factors().len()
        && reference
            .random_effects
            .iter()
            .zip(spec.random_intercept_factors())
            .all(|(r, f)| &r.factor == f);
    if reference.coefficient_names != spec.fixed_columns() || !same_factors {
        return Err(Error::InvalidSpec("reference fit is for a different model".into()));
    }
    fit_mixed_inner(table, spec, &FitOptions::default(), Some(reference))
}

fn fit_mixed_inner(
    table: &ObservationTable,
    spec: &ModelSpec,
    opts: &FitOptions,
    reference: Option<&FitResult>,
) -> Result<FitResult> {
    spec.validate_against(table)?;
    if !spec.is_mixed() {
        return Err(Error::InvalidSpec("fit_mixed requires a random-intercept factor".into()));
    }
    let factors = spec
        .random_intercept_factors()
        .iter()
        .map(|name| {
            let f = table.factor(name).expect("validated");
            if f.n_levels() < 2 {
                return Err(Error::InvalidSpec(format!(
                    "random factor `{name}` needs at least 2 levels, has {}",
                    f.n_levels()
                )));
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    let x = table.design(spec)?;
    let y = table.y();
    let base = fixed::newton(y, &x, None, opts.max_iterations)?;

    let mut active: Vec<usize> = (0..factors.len()).collect();
    let mut total_iterations = base.iterations;
    let mut current = optimize(y, &x, &factors, &active, &base, opts, reference)?;
    total_iterations += current.iterations;
    loop {
        let small: Vec<usize> = active
            .iter()
            .zip(&current.variances)
            .filter(|(_, &v)| v < opts.boundary_variance)
            .map(|(&f, _)| f)
            .collect();
        if small.is_empty() {
            break;
        }
        let reduced: Vec<usize> = active.iter().copied().filter(|f| !small.contains(f)).collect();
        let candidate = optimize(y, &x, &factors, &reduced, &base, opts, reference)?;
        total_iterations += candidate.iterations;
        let tol = 1e-7 * current.value.abs().max(1.0);
        if candidate.value >= current.value - tol {
            active = reduced;
            current = candidate;
        } else {
            break;
        }
    }

    let random_effects = factors
        .iter()
        .enumerate()
        .map(|(f, fac)| match active.iter().position(|&a| a == f) {
            Some(slot) => RandomEffectEstimate {
                factor: fac.name().to_string(),
                variance: current.variances[slot],
                modes: current.modes[slot].clone(),
                at_boundary: false,
            },
            None => RandomEffectEstimate {
                factor: fac.name().to_string(),
                variance: 0.0,
                modes: vec![0.0; fac.n_levels()],
                at_boundary: true,
            },
        })
        .collect();

    Ok(FitResult {
        coefficient_names: spec.fixed_columns().to_vec(),
        base_se: standard_errors(&current.covariance, x.ncols()),
        beta_hat: current.beta,
        random_effects,
        objective_value: current.value,
        converged: true,
        iterations: total_iterations,
    })
}

struct Optimum {
    beta: Vec<f64>,
    variances: Vec<f64>,
    /// `b_hat` per active factor.
    modes: Vec<Vec<f64>>,
    value: f64,
    /// Covariance of `(beta, tau)`; only the `beta` block is used.
    covariance: DMatrix<f64>,
    iterations: usize,
}

fn sigmas(tau: &[f64]) -> Vec<f64> {
    tau.iter().map(|t| (0.5 * t).exp()).collect()
}

/// Maximizes the Laplace marginal over `(beta, log variances)` for the
/// `active` subset of `factors`.
fn optimize(
    y: &[f64],
    x: &DMatrix<f64>,
    factors: &[&GroupingFactor],
    active: &[usize],
    base: &fixed::FixedFit,
    opts: &FitOptions,
    reference: Option<&FitResult>,
) -> Result<Optimum> {
    let p = x.ncols();
    if active.is_empty() {
        return Ok(Optimum {
            beta: base.beta.clone(),
            variances: Vec::new(),
            modes: Vec::new(),
            value: base.objective,
            covariance: base.covariance.clone(),
            iterations: 0,
        });
    }
    let mut start = 0;
    let index: Vec<FactorIndex> = active
        .iter()
        .map(|&f| {
            let fac = factors[f];
            let fi = FactorIndex {
                start,
                levels: fac.n_levels(),
                assignment: fac.assignment().to_vec(),
            };
            start += fac.n_levels();
            fi
        })
        .collect();
    let problem = MixedProblem::new(y, x, index);
    let nf = problem.n_factors();
    let dim = p + nf;

    let mut warm = vec![0.0; problem.n_modes()];
    let negated = |phi: &[f64], warm: &mut Vec<f64>| -> Result<(f64, Vec<f64>)> {
        let ev = problem.evaluate(&phi[..p], &sigmas(&phi[p..]), warm)?;
        *warm = ev.modes;
        Ok((-ev.value, ev.gradient.iter().map(|g| -g).collect()))
    };

    let mut phi0 = match reference {
        Some(r) => r.beta_hat.clone(),
        None => base.beta.clone(),
    };
    phi0.extend(active.iter().map(|&f| {
        let v = reference.map_or(0.0, |r| r.random_effects[f].variance);
        if v >= opts.boundary_variance {
            v.ln()
        } else {
            opts.initial_variance.ln()
        }
    }));

    // Initial inverse Hessian: conditional curvature for beta, finite-difference
    // curvature for each log variance.
    let mut h0 = DMatrix::<f64>::identity(dim, dim);
    let (beta_info, modes0) = problem.beta_information(&phi0[..p], &sigmas(&phi0[p..]), &warm)?;
    match beta_info.cholesky() {
        Some(ch) => h0.view_mut((0, 0), (p, p)).copy_from(&ch.inverse()),
        None => h0.view_mut((0, 0), (p, p)).copy_from(&base.covariance),
    }
    warm = modes0;
    for f in 0..nf {
        let step = 0.05;
        let mut up = phi0.clone();
        up[p + f] += step;
        let mut down = phi0.clone();
        down[p + f] -= step;
        let mut w = warm.clone();
        let gu = negated(&up, &mut w)?.1[p + f];
        let gd = negated(&down, &mut w)?.1[p + f];
        let curvature = (gu - gd) / (2.0 * step);
        h0[(p + f, p + f)] = if curvature > 1e-8 { 1.0 / curvature } else { 1.0 };
    }

    let mut lower = vec![f64::NEG_INFINITY; dim];
    let mut upper = vec![f64::INFINITY; dim];
    for f in 0..nf {
        lower[p + f] = MIN_LOG_VARIANCE;
        upper[p + f] = MAX_LOG_VARIANCE;
    }
    let bopts = BfgsOptions {
        max_iterations: opts.max_iterations,
        rel_tol: opts.rel_tol,
        grad_tol: opts.grad_tol,
        max_step: 5.0,
    };
    let result = bfgs::minimize(
        |phi| negated(phi, &mut warm),
        &phi0,
        h0,
        &lower,
        &upper,
        bopts,
    )?;
    let phi = result.x;
    let final_eval = problem.evaluate(&phi[..p], &sigmas(&phi[p..]), &warm)?;
    let sig = sigmas(&phi[p..]);
    let modes = (0..nf)
        .map(|f| {
            let fi = problem.factor(f);
            final_eval.modes[fi.start..fi.start + fi.levels]
                .iter()
                .map(|u| u * sig[f])
                .collect()
        })
        .collect();

    let covariance = information_inverse(&problem, &phi, &final_eval.gradient, &final_eval.modes)?;
    Ok(Optimum {
        beta: phi[..p].to_vec(),
        variances: sig.iter().map(|s| s * s).collect(),
        modes,
        value: final_eval.value,
        covariance,
        iterations: result.iterations,
    })
}

/// Inverse of the negative Hessian of the marginal objective at `phi`, by
/// forward differences of the analytic gradient.
fn information_inverse(
    problem: &MixedProblem<'_>,
    phi: &[f64],
    gradient: &[f64],
    modes: &[f64],
) -> Result<DMatrix<f64>> {
    let p = problem.n_fixed();
    let dim = phi.len();
    let grad = |v: &[f64]| -> Result<Vec<f64>> {
        Ok(problem.evaluate(&v[..p], &sigmas(&v[p..]), modes)?.gradient)
    };
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        let h = 1e-4 * phi[j].abs().max(1.0);
        let mut up = phi.to_vec();
        up[j] += h;
        let gu = grad(&up)?;
        for i in 0..dim {
            hess[(i, j)] = (gu[i] - gradient[i]) / h;
        }
    }
    let info = -(&hess + hess.transpose()) * 0.5;
    if let Some(ch) = info.clone().cholesky() {
        return Ok(ch.inverse());
    }
    // Flat direction in the variance parameters: fall back to the beta block
    // conditional on the variances.
    let beta_block = info.view((0, 0), (p, p)).into_owned();
    beta_block
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NonConvergence {
            iterations: 0,
            gradient_norm: f64::NAN,
            last_iterate: phi.to_vec(),
        })
}
