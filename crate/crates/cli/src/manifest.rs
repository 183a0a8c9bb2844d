use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything needed to replay a run on the same input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub input: Option<String>,
    pub formula: Option<String>,
    pub resamples: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    /// Requested worker count; absent means all available cores.
    pub workers: Option<usize>,
    pub mode: Option<String>,
    pub factors: Vec<String>,
    pub version: String,
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            input: None,
            formula: None,
            resamples: None,
            alpha: None,
            seed: None,
            workers: None,
            mode: None,
            factors: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_seconds: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            elapsed_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// `results.json` gets `results.manifest.json` next to it.
pub fn beside(output: &Path) -> PathBuf {
    let stem = output.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    output.with_file_name(format!("{stem}.manifest.json"))
}
