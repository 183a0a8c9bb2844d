//! CSV input. The header names columns; the formula decides which column is
//! the response, which are numeric covariates and which are grouping factors.

use std::path::Path;

use quasiboot::{GroupingFactor, ModelSpec, ObservationTable};

use crate::error::{CliError, CliResult};
use crate::formula::Formula;

/// Responses this far outside the unit interval are snapped onto it.
pub const RESPONSE_SLACK: f64 = 1e-12;

const MISSING: &[&str] = &["", "NA", "NaN", "nan", "null"];

fn ingest(msg: impl Into<String>) -> CliError {
    CliError::Ingest(msg.into())
}

fn numeric(field: &str, row: usize, column: &str) -> CliResult<f64> {
    if MISSING.contains(&field) {
        return Err(ingest(format!("row {row}: missing value in column `{column}`")));
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ingest(format!("row {row}: `{field}` in column `{column}` is not a finite number"))),
    }
}

/// Reads `path` and builds the table the formula needs, plus the resolved
/// model specification. Row numbers in errors count data rows from 1.
pub fn ingest_csv(path: &Path, formula: &Formula) -> CliResult<(ObservationTable, ModelSpec)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.iter().all(String::is_empty) {
        return Err(ingest(format!("{}: file is empty", path.display())));
    }
    let spec = formula.resolve(&headers)?;
    let index = |name: &str| headers.iter().position(|h| h == name).expect("resolved column");
    let response_at = index(&formula.response.name);
    let fixed_at: Vec<usize> = formula.fixed.iter().map(|t| index(&t.name)).collect();
    let factor_at: Vec<usize> = formula.random.iter().map(|t| index(&t.name)).collect();

    let mut y = Vec::new();
    let mut covariates: Vec<Vec<f64>> = vec![Vec::new(); fixed_at.len()];
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); factor_at.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| ingest(format!("row {row}: {e}")))?;
        let field = |at: usize| record.get(at).unwrap_or("");
        let v = numeric(field(response_at), row, &headers[response_at])?;
        if !(-RESPONSE_SLACK..=1.0 + RESPONSE_SLACK).contains(&v) {
            return Err(ingest(format!(
                "row {row}: response {v} in column `{}` is outside [0, 1]",
                headers[response_at]
            )));
        }
        y.push(v.clamp(0.0, 1.0));
        for (col, &at) in covariates.iter_mut().zip(&fixed_at) {
            col.push(numeric(field(at), row, &headers[at])?);
        }
        for (col, &at) in labels.iter_mut().zip(&factor_at) {
            let label = field(at);
            if MISSING.contains(&label) {
                return Err(ingest(format!("row {row}: missing value in column `{}`", headers[at])));
            }
            col.push(label.to_string());
        }
    }
    if y.is_empty() {
        return Err(ingest(format!("{}: no data rows", path.display())));
    }
    let covariates = formula.fixed.iter().map(|t| t.name.clone()).zip(covariates).collect();
    let factors = formula
        .random
        .iter()
        .zip(&labels)
        .map(|(t, l)| GroupingFactor::from_labels(t.name.clone(), l))
        .collect();
    let table = ObservationTable::with_intercept(y, covariates, factors).map_err(|e| ingest(e.to_string()))?;
    Ok((table, spec))
}

/// Column names of a CSV file, for commands that need to resolve a
/// formula without reading the whole file.
pub fn headers(path: &Path) -> CliResult<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ingest(format!("{}: {e}", path.display())))?;
    Ok(reader
        .headers()
        .map_err(|e| ingest(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect())
}
