//! The results table in text, JSON and CSV form.
//!
//! Base standard errors are always present. Bootstrap columns are empty when
//! only the base model was fitted.

use std::fmt::Write as _;

use quasiboot::interpret::InterpretationRow;
use quasiboot::{FitResult, InferenceReport};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub coefficient: String,
    pub estimate: f64,
    pub exp_estimate: f64,
    pub base_se: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub p_value: Option<f64>,
    /// The bootstrap p-value is below 0.05, where the number of resamples
    /// limits how finely it is resolved.
    pub p_granularity_limited: Option<bool>,
    /// Change in the mean per unit of the covariate at a mean of one half.
    pub midpoint_slope: f64,
    pub failures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub factor: String,
    pub variance: f64,
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub formula: String,
    pub rows_used: usize,
    pub objective: f64,
    pub alpha: Option<f64>,
    pub resamples: Option<usize>,
    pub effective_resamples: Option<usize>,
    pub coefficients: Vec<ReportRow>,
    pub variance_components: Vec<VarianceComponent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interpretation: Vec<InterpretationRow>,
}

impl Report {
    /// Base-model report with empty bootstrap columns.
    pub fn from_fit(formula: &str, rows_used: usize, fit: &FitResult) -> Self {
        let coefficients = fit
            .coefficient_names
            .iter()
            .zip(fit.beta_hat.iter().zip(&fit.base_se))
            .map(|(name, (&b, &se))| ReportRow {
                coefficient: name.clone(),
                estimate: b,
                exp_estimate: b.exp(),
                base_se: se,
                ci_lower: None,
                ci_upper: None,
                p_value: None,
                p_granularity_limited: None,
                midpoint_slope: b / 4.0,
                failures: None,
            })
            .collect();
        let variance_components = fit
            .random_effects
            .iter()
            .map(|r| VarianceComponent {
                factor: r.factor.clone(),
                variance: r.variance,
                at_boundary: r.at_boundary,
            })
            .collect();
        Self {
            formula: formula.to_string(),
            rows_used,
            objective: fit.objective_value,
            alpha: None,
            resamples: None,
            effective_resamples: None,
            coefficients,
            variance_components,
            interpretation: Vec::new(),
        }
    }

    /// Base-model report filled in with bootstrap intervals and p-values.
    pub fn with_bootstrap(formula: &str, rows_used: usize, fit: &FitResult, inference: &InferenceReport) -> Self {
        let mut report = Self::from_fit(formula, rows_used, fit);
        report.alpha = Some(inference.alpha);
        report.resamples = Some(inference.resamples);
        report.effective_resamples = Some(inference.effective_resamples);
        for (row, c) in report.coefficients.iter_mut().zip(&inference.coefficients) {
            row.ci_lower = Some(c.ci_lower);
            row.ci_upper = Some(c.ci_upper);
            row.p_value = Some(c.p_value);
            row.p_granularity_limited = Some(c.granularity_limited);
            row.failures = Some(inference.failures);
        }
        report
    }

    /// Adds a worked example per non-intercept coefficient, moving a mean
    /// of `baseline` by one unit of the covariate.
    pub fn interpret(&mut self, baseline: f64) -> CliResult<()> {
        self.interpretation = self
            .coefficients
            .iter()
            .filter(|r| r.coefficient != quasiboot::INTERCEPT)
            .map(|r| InterpretationRow::new(r.coefficient.clone(), r.estimate, baseline))
            .collect::<quasiboot::Result<_>>()
            .map_err(|e| CliError::Other(e.to_string()))?;
        Ok(())
    }

    pub fn render(&self, format: Format) -> CliResult<String> {
        match format {
            Format::Text => Ok(self.to_text()),
            Format::Json => self.to_json(),
            Format::Csv => rows_to_csv(&self.coefficients),
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Ingest(format!("report JSON: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.formula);
        let _ = writeln!(out, "rows: {}    quasi-log-likelihood: {:.4}", self.rows_used, self.objective);
        if let (Some(alpha), Some(r), Some(eff)) = (self.alpha, self.resamples, self.effective_resamples) {
            let _ = writeln!(
                out,
                "bootstrap: {r} resamples, {} failed, {:.0}% intervals",
                r - eff,
                100.0 * (1.0 - alpha)
            );
        } else {
            let _ = writeln!(out, "bootstrap: not run (base standard errors only)");
        }
        out.push('\n');
        let header = [
            "coefficient", "estimate", "exp(est)", "base SE", "CI lower", "CI upper", "boot p", "slope@0.5",
        ];
        let cells: Vec<Vec<String>> = self
            .coefficients
            .iter()
            .map(|r| {
                let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                let p = match (r.p_value, r.p_granularity_limited) {
                    (Some(p), Some(true)) => format!("{p:.4}*"),
                    (p, _) => opt(p),
                };
                vec![
                    r.coefficient.clone(),
                    format!("{:.4}", r.estimate),
                    format!("{:.4}", r.exp_estimate),
                    format!("{:.4}", r.base_se),
                    opt(r.ci_lower),
                    opt(r.ci_upper),
                    p,
                    format!("{:.4}", r.midpoint_slope),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| cells.iter().map(|c| c[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |fields: Vec<&str>| {
            let mut s = format!("{:<w$}", fields[0], w = widths[0]);
            for (f, w) in fields.iter().zip(&widths).skip(1) {
                let _ = write!(s, "  {f:>w$}");
            }
            s.trim_end().to_string()
        };
        let _ = writeln!(out, "{}", line(header.to_vec()));
        for c in &cells {
            let _ = writeln!(out, "{}", line(c.iter().map(String::as_str).collect()));
        }
        if self.coefficients.iter().any(|r| r.p_granularity_limited == Some(true)) {
            let _ = writeln!(
                out,
                "* below 0.05, where the resample count limits the resolution of bootstrap p-values"
            );
        }
        if !self.variance_components.is_empty() {
            out.push('\n');
            for v in &self.variance_components {
                let flag = if v.at_boundary { " (at boundary)" } else { "" };
                let _ = writeln!(out, "random intercept variance, {}: {:.4}{flag}", v.factor, v.variance);
            }
        }
        if !self.interpretation.is_empty() {
            out.push('\n');
            for i in &self.interpretation {
                let _ = writeln!(
                    out,
                    "{}: one unit moves a mean of {:.1}% to {:.1}% (ratio p/(1-p) times {:.4})",
                    i.coefficient,
                    100.0 * i.old_proportion,
                    100.0 * i.new_proportion,
                    i.exp_beta
                );
            }
        }
        out
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Other(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Other(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> CliResult<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Ingest(format!("report CSV: {e}")))
}
