//! Data model, logistic link, and the quasi-log-likelihood objective.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the implicit intercept column.
pub const INTERCEPT: &str = "(Intercept)";

/// Linear predictors are clamped to this magnitude before any link evaluation.
pub const ETA_CLAMP: f64 = 35.0;

/// Responses this far outside `[0, 1]` are snapped to the boundary; anything
/// further out is rejected.
pub const RESPONSE_SLACK: f64 = 1e-12;

/// Inverse logistic link `e^x / (1 + e^x)`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    let x = x.clamp(-ETA_CLAMP, ETA_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Contribution of one row: `y log G(eta) + (1 - y) log(1 - G(eta))`,
/// written as `y * eta - log(1 + e^eta)`.
#[inline]
pub(crate) fn quasi_term(y: f64, eta: f64) -> f64 {
    let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
    -y * softplus(-eta) - (1.0 - y) * softplus(eta)
}

/// `(G(eta), quasi_term(y, eta))` sharing one exponential and one logarithm.
#[inline]
pub(crate) fn mean_and_term(y: f64, eta: f64) -> (f64, f64) {
    let eta = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
    let e = (-eta.abs()).exp();
    let softplus = eta.max(0.0) + e.ln_1p();
    let mu = if eta >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (mu, y * eta - softplus)
}

/// A vector of linear predictor values, clamped to `[-35, 35]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor(Vec<f64>);

impl LinearPredictor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidData(format!("linear predictor {i} is NaN")));
        }
        Ok(Self(
            values
                .into_iter()
                .map(|v| v.clamp(-ETA_CLAMP, ETA_CLAMP))
                .collect(),
        ))
    }

    /// `X beta (+ offset)`.
    pub fn from_design(x: &DMatrix<f64>, beta: &[f64], offset: Option<&[f64]>) -> Result<Self> {
        if beta.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                what: "coefficient vector",
                expected: x.ncols(),
                found: beta.len(),
            });
        }
        let mut eta = x * DVector::from_column_slice(beta);
        if let Some(off) = offset {
            if off.len() != eta.len() {
                return Err(Error::DimensionMismatch {
                    what: "offset",
                    expected: eta.len(),
                    found: off.len(),
                });
            }
            for (e, o) in eta.iter_mut().zip(off) {
                *e += o;
            }
        }
        Self::new(eta.as_slice().to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Quasi-log-likelihood `sum_i y_i log G(eta_i) + (1 - y_i) log(1 - G(eta_i))`.
///
/// For binary `y` this is exactly the Bernoulli log-likelihood; for
/// fractional `y` it interpolates linearly between the two cases.
pub fn quasi_log_likelihood(y: &[f64], eta: &LinearPredictor) -> Result<f64> {
    if y.len() != eta.len() {
        return Err(Error::DimensionMismatch {
            what: "response vs linear predictor",
            expected: eta.len(),
            found: y.len(),
        });
    }
    Ok(y.iter()
        .zip(eta.as_slice())
        .map(|(&yi, &ei)| quasi_term(yi, ei))
        .sum())
}

/// Gradient of [`quasi_log_likelihood`] with respect to the coefficients:
/// `X^T (y - G(eta))`.
pub fn quasi_gradient(y: &[f64], x: &DMatrix<f64>, eta: &LinearPredictor) -> Result<Vec<f64>> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "response vs design rows",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if eta.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "linear predictor vs design rows",
            expected: x.nrows(),
            found: eta.len(),
        });
    }
    let resid = DVector::from_iterator(
        y.len(),
        y.iter()
            .zip(eta.as_slice())
            .map(|(&yi, &ei)| yi - logistic(ei)),
    );
    Ok(x.tr_mul(&resid).as_slice().to_vec())
}

/// A categorical grouping variable: one level label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingFactor {
    name: String,
    levels: Vec<String>,
    assignment: Vec<usize>,
}

impl GroupingFactor {
    /// Builds a factor from explicit levels and a row-to-level map. Every
    /// level must be used by at least one row.
    pub fn new(name: impl Into<String>, levels: Vec<String>, assignment: Vec<usize>) -> Result<Self> {
        let name = name.into();
        if levels.is_empty() {
            return Err(Error::InvalidData(format!("factor `{name}` has no levels")));
        }
        let mut seen = vec![false; levels.len()];
        for (row, &lvl) in assignment.iter().enumerate() {
            match seen.get_mut(lvl) {
                Some(s) => *s = true,
                None => {
                    return Err(Error::InvalidData(format!(
                        "factor `{name}` row {row} references level {lvl} of {}",
                        levels.len()
                    )))
                }
            }
        }
        if let Some(l) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidData(format!(
                "factor `{name}` level `{}` has no rows",
                levels[l]
            )));
        }
        let mut uniq = HashMap::with_capacity(levels.len());
        for l in &levels {
            if uniq.insert(l.as_str(), ()).is_some() {
                return Err(Error::InvalidData(format!(
                    "factor `{name}` has duplicate level `{l}`"
                )));
            }
        }
        Ok(Self {
            name,
            levels,
            assignment,
        })
    }

    /// Builds a factor from per-row labels; levels are ordered by first appearance.
    pub fn from_labels<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut levels = Vec::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l).or_insert_with(|| {
                    levels.push(l.to_string());
                    levels.len() - 1
                })
            })
            .collect();
        Self {
            name: name.into(),
            levels,
            assignment,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn level_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    /// Row counts per level.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.levels.len()];
        for &a in &self.assignment {
            c[a] += 1;
        }
        c
    }

    /// Shannon entropy (natural log) of the level row-proportions.
    pub fn entropy(&self) -> f64 {
        let n = self.assignment.len() as f64;
        self.counts()
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }
}

/// Responses, design matrix, and grouping factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    y: Vec<f64>,
    columns: Vec<String>,
    x: DMatrix<f64>,
    factors: Vec<GroupingFactor>,
}

impl ObservationTable {
    /// Validates and assembles a table. Responses within `1e-12` of the unit
    /// interval are snapped onto it.
    pub fn new(
        y: Vec<f64>,
        columns: Vec<String>,
        x: DMatrix<f64>,
        factors: Vec<GroupingFactor>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("table has no rows".into()));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "design rows",
                expected: n,
                found: x.nrows(),
            });
        }
        if x.ncols() == 0 || columns.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                what: "design columns",
                expected: columns.len(),
                found: x.ncols(),
            });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at row {}, column `{}`",
                pos % n + 1,
                columns[pos / n]
            )));
        }
        let y = y
            .into_iter()
            .enumerate()
            .map(|(i, v)| snap_response(v).ok_or_else(|| {
                Error::InvalidData(format!("response {v} at row {} is outside [0, 1]", i + 1))
            }))
            .collect::<Result<Vec<_>>>()?;
        let mut names = HashMap::new();
        for f in &factors {
            if f.assignment.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "factor assignment",
                    expected: n,
                    found: f.assignment.len(),
                });
            }
            if names.insert(f.name.clone(), ()).is_some() {
                return Err(Error::InvalidData(format!("duplicate factor `{}`", f.name)));
            }
        }
        Ok(Self {
            y,
            columns,
            x,
            factors,
        })
    }

    /// Convenience constructor that prepends an intercept column of ones.
    pub fn with_intercept(
        y: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
        factors: Vec<GroupingFactor>,
    ) -> Result<Self> {
        let n = y.len();
        let mut columns = vec![INTERCEPT.to_string()];
        let mut x = DMatrix::from_element(n, covariates.len() + 1, 1.0);
        for (j, (name, col)) in covariates.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "covariate column",
                    expected: n,
                    found: col.len(),
                });
            }
            x.set_column(j + 1, &DVector::from_vec(col));
            columns.push(name);
        }
        Self::new(y, columns, x, factors)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn factors(&self) -> &[GroupingFactor] {
        &self.factors
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn factor(&self, name: &str) -> Option<&GroupingFactor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Design matrix restricted to the spec's fixed columns, in spec order.
    pub fn design(&self, spec: &ModelSpec) -> Result<DMatrix<f64>> {
        let idx = spec
            .fixed_columns()
            .iter()
            .map(|c| {
                self.column_index(c)
                    .ok_or_else(|| Error::InvalidSpec(format!("unknown column `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if idx.iter().enumerate().all(|(k, &j)| k == j) && idx.len() == self.x.ncols() {
            return Ok(self.x.clone());
        }
        Ok(self.x.select_columns(idx.iter()))
    }
}

fn snap_response(v: f64) -> Option<f64> {
    if !v.is_finite() || !(-RESPONSE_SLACK..=1.0 + RESPONSE_SLACK).contains(&v) {
        None
    } else {
        Some(v.clamp(0.0, 1.0))
    }
}

/// Fixed-effect columns and random-intercept factors of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    fixed_columns: Vec<String>,
    random_intercept_factors: Vec<String>,
}

impl ModelSpec {
    /// At most this many random-intercept factors are supported.
    pub const MAX_RANDOM_FACTORS: usize = 2;

    pub fn new(fixed_columns: Vec<String>, random_intercept_factors: Vec<String>) -> Result<Self> {
        match fixed_columns.first() {
            None => return Err(Error::InvalidSpec("no fixed-effect columns".into())),
            Some(c) if c != INTERCEPT => {
                return Err(Error::InvalidSpec(format!(
                    "first fixed column must be `{INTERCEPT}`, found `{c}`"
                )))
            }
            _ => {}
        }
        if has_duplicates(&fixed_columns) {
            return Err(Error::InvalidSpec("duplicate fixed-effect column".into()));
        }
        if random_intercept_factors.len() > Self::MAX_RANDOM_FACTORS {
            return Err(Error::InvalidSpec(format!(
                "at most {} random-intercept factors are supported",
                Self::MAX_RANDOM_FACTORS
            )));
        }
        if has_duplicates(&random_intercept_factors) {
            return Err(Error::InvalidSpec("duplicate random-intercept factor".into()));
        }
        Ok(Self {
            fixed_columns,
            random_intercept_factors,
        })
    }

    /// Intercept plus the named covariates, with the given random intercepts.
    pub fn from_names<S: AsRef<str>, T: AsRef<str>>(covariates: &[S], random: &[T]) -> Result<Self> {
        let mut fixed = vec![INTERCEPT.to_string()];
        fixed.extend(covariates.iter().map(|s| s.as_ref().to_string()));
        Self::new(fixed, random.iter().map(|s| s.as_ref().to_string()).collect())
    }

    pub fn fixed_columns(&self) -> &[String] {
        &self.fixed_columns
    }

    pub fn random_intercept_factors(&self) -> &[String] {
        &self.random_intercept_factors
    }

    pub fn n_coefficients(&self) -> usize {
        self.fixed_columns.len()
    }

    pub fn is_mixed(&self) -> bool {
        !self.random_intercept_factors.is_empty()
    }

    /// Same fixed effects without random intercepts.
    pub fn without_random(&self) -> Self {
        Self {
            fixed_columns: self.fixed_columns.clone(),
            random_intercept_factors: Vec::new(),
        }
    }

    /// Checks every referenced column and factor exists on the table.
    pub fn validate_against(&self, table: &ObservationTable) -> Result<()> {
        for c in &self.fixed_columns {
            if table.column_index(c).is_none() {
                return Err(Error::InvalidSpec(format!("unknown column `{c}`")));
            }
        }
        for f in &self.random_intercept_factors {
            if table.factor(f).is_none() {
                return Err(Error::InvalidSpec(format!("unknown factor `{f}`")));
            }
        }
        Ok(())
    }
}

fn has_duplicates(v: &[String]) -> bool {
    let mut seen = HashMap::new();
    v.iter().any(|s| seen.insert(s.as_str(), ()).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(v: &[f64]) -> LinearPredictor {
        LinearPredictor::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fused_mean_and_term_agree() {
        for eta in [-40.0, -35.0, -3.2, -1e-9, 0.0, 0.7, 12.0, 36.0] {
            for y in [0.0, 0.3, 1.0] {
                let (mu, term) = mean_and_term(y, eta);
                assert!((mu - logistic(eta)).abs() < 1e-15);
                assert!((term - quasi_term(y, eta)).abs() < 1e-12 * (1.0 + term.abs()));
            }
        }
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!((0.4f64.exp() - 1.4918).abs() < 1e-4);
        assert!(logistic(1e6) < 1.0);
        assert!(logistic(-1e6) > 0.0);
    }

    #[test]
    fn quasi_ll_examples() {
        let half = 0.5f64.ln();
        assert!((quasi_log_likelihood(&[1.0], &lp(&[0.0])).unwrap() - half).abs() < 1e-12);
        assert!((quasi_log_likelihood(&[0.5], &lp(&[0.0])).unwrap() - half).abs() < 1e-12);
        let v = quasi_log_likelihood(&[0.25], &lp(&[3f64.ln()])).unwrap();
        let by_hand = 0.25 * 0.75f64.ln() + 0.75 * 0.25f64.ln();
        assert!((v - by_hand).abs() < 1e-12);
        assert!((v + 1.111641).abs() < 1e-6);
    }

    #[test]
    fn quasi_ll_dimension_mismatch() {
        assert!(matches!(
            quasi_log_likelihood(&[0.1, 0.2], &lp(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let g = quasi_gradient(&[1.0], &x, &lp(&[0.0])).unwrap();
        assert_eq!(g, vec![0.5]);

        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 2.0]);
        let beta = [0.2, -0.7];
        let eta = LinearPredictor::from_design(&x, &beta, None).unwrap();
        let y: Vec<f64> = eta.as_slice().iter().map(|&e| logistic(e)).collect();
        for g in quasi_gradient(&y, &x, &eta).unwrap() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_responses_are_finite() {
        let v = quasi_log_likelihood(&[0.0, 1.0], &lp(&[40.0, -40.0])).unwrap();
        assert!(v.is_finite() && v < 0.0);
    }

    #[test]
    fn response_slack_rule() {
        let t = ObservationTable::with_intercept(vec![1.0 + 5e-13, -5e-13], vec![], vec![]).unwrap();
        assert_eq!(t.y(), &[1.0, 0.0]);
        let err = ObservationTable::with_intercept(vec![0.5, 1.2], vec![], vec![]).unwrap_err();
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn factor_validation() {
        assert!(GroupingFactor::new("g", vec!["a".into(), "b".into()], vec![0, 0]).is_err());
        assert!(GroupingFactor::new("g", vec!["a".into()], vec![0, 1]).is_err());
        let f = GroupingFactor::from_labels("g", &["s2", "s1", "s2"]);
        assert_eq!(f.levels(), &["s2".to_string(), "s1".to_string()]);
        assert_eq!(f.assignment(), &[0, 1, 0]);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::from_names(&["x1", "x2"], &["s"]).is_ok());
        assert!(ModelSpec::new(vec!["x1".into()], vec![]).is_err());
        assert!(ModelSpec::from_names(&["x1", "x1"], &[] as &[&str]).is_err());
        assert!(ModelSpec::from_names(&["x1"], &["s", "s"]).is_err());
        assert!(ModelSpec::from_names(&["x1"], &["a", "b", "c"]).is_err());
    }

    proptest! {
        #[test]
        fn logistic_symmetry(x in -50.0f64..50.0) {
            let g = logistic(x);
            prop_assert!(g > 0.0 && g < 1.0);
            prop_assert!((logistic(-x) - (1.0 - g)).abs() < 1e-15);
        }

        #[test]
        fn quasi_ll_label_symmetry(
            rows in proptest::collection::vec((0.0f64..=1.0, -10.0f64..10.0), 1..20)
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let e: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let y1: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
            let e1: Vec<f64> = e.iter().map(|v| -v).collect();
            let a = quasi_log_likelihood(&y, &lp(&e)).unwrap();
            let b = quasi_log_likelihood(&y1, &lp(&e1)).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            prop_assert!(a < 0.0);
        }

        #[test]
        fn binary_matches_bernoulli(
            rows in proptest::collection::vec((proptest::bool::ANY, -8.0f64..8.0), 1..20)
        ) {
            let y: Vec<f64> = rows.iter().map(|r| if r.0 { 1.0 } else { 0.0 }).collect();
            let e: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let q = quasi_log_likelihood(&y, &lp(&e)).unwrap();
            let bern: f64 = rows
                .iter()
                .map(|&(b, eta)| {
                    let p = eta.exp() / (1.0 + eta.exp());
                    if b { p.ln() } else { (1.0 - p).ln() }
                })
                .sum();
            prop_assert!((q - bern).abs() < 1e-9);
        }
    }
}
