//! Plain-language readings of logit-scale coefficients.
//!
//! A coefficient `beta` multiplies the ratio `p / (1 - p)` by `exp(beta)`.
//! Near zero that ratio is close to `p` itself, so `exp(beta)` approximates
//! a ratio of proportions; near one the same holds for `1 - p` with
//! `exp(-beta)`. In the middle, the slope `beta G(eta) (1 - G(eta))` peaks
//! at `beta / 4`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::logistic;

/// Largest baseline for which the low-end approximation is considered reliable.
pub const LOW_BAND: f64 = 0.15;
/// Smallest baseline for which the high-end approximation is considered reliable.
pub const HIGH_BAND: f64 = 0.85;

fn check_interior(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidData(format!("proportion {p} is not strictly inside (0, 1)")))
    }
}

/// Exact proportion after multiplying the ratio `p / (1 - p)` by `exp(beta)`.
pub fn ratio_update(prop_old: f64, beta: f64) -> Result<f64> {
    check_interior(prop_old)?;
    let r = prop_old / (1.0 - prop_old) * beta.exp();
    Ok(r / (1.0 + r))
}

/// `d G(eta) / d x_j = beta e^eta / (1 + e^eta)^2`; equals `beta / 4` at `eta = 0`.
pub fn marginal_derivative(beta: f64, eta: f64) -> f64 {
    let g = logistic(eta);
    beta * g * (1.0 - g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Approximation {
    pub approximate: f64,
    pub exact: f64,
    /// The baseline lies outside the band where the approximation is reliable.
    pub outside_band: bool,
}

/// Near zero, `p_new ~ p_old exp(beta)`.
pub fn endpoint_low_approx(prop_old: f64, beta: f64) -> Result<Approximation> {
    Ok(Approximation {
        approximate: prop_old * beta.exp(),
        exact: ratio_update(prop_old, beta)?,
        outside_band: prop_old > LOW_BAND,
    })
}

/// Near one, `1 - p_new ~ (1 - p_old) exp(-beta)`.
pub fn endpoint_high_approx(prop_old: f64, beta: f64) -> Result<Approximation> {
    Ok(Approximation {
        approximate: 1.0 - (1.0 - prop_old) * (-beta).exp(),
        exact: ratio_update(prop_old, beta)?,
        outside_band: prop_old < HIGH_BAND,
    })
}

/// Ratio of two proportions and the ratio of their ratios `p / (1 - p)`.
pub fn ratio_of_proportions_and_ratios(p1: f64, p2: f64) -> Result<(f64, f64)> {
    check_interior(p1)?;
    check_interior(p2)?;
    let r = |p: f64| p / (1.0 - p);
    Ok((p1 / p2, r(p1) / r(p2)))
}

/// One coefficient's interpretive quantities, with a worked example moving
/// a baseline proportion by one unit of the covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationRow {
    pub coefficient: String,
    pub beta: f64,
    pub exp_beta: f64,
    pub midpoint_slope: f64,
    pub old_proportion: f64,
    pub new_proportion: f64,
}

impl InterpretationRow {
    pub fn new(coefficient: impl Into<String>, beta: f64, old_proportion: f64) -> Result<Self> {
        Ok(Self {
            coefficient: coefficient.into(),
            beta,
            exp_beta: beta.exp(),
            midpoint_slope: beta / 4.0,
            old_proportion,
            new_proportion: ratio_update(old_proportion, beta)?,
        })
    }
}
