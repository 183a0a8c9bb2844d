//! Command-line front end: read a CSV, fit the base model, bootstrap it,
//! run simulation cells and render reports.

pub mod error;
pub mod formula;
pub mod ingest;
pub mod manifest;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quasiboot::sim::{run_grid, CellSummary, NoiseModel, SimConfig, SimMetadata, SimResult};
use quasiboot::{fit, run_bootstrap_with_base, BootstrapConfig, InferenceReport, ResampleMode, Workers};
use serde::Serialize;

pub use error::{CliError, CliResult, ParseError};
pub use formula::{parse_formula, Formula};
pub use ingest::ingest_csv;
pub use manifest::RunManifest;
pub use report::{Format, Report, ReportRow};

#[derive(Debug, Parser)]
#[command(name = "quasiboot", version, about = "Fractional-outcome logistic mixed models with bootstrap-t inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the base model and report estimates with base standard errors.
    Fit(FitArgs),
    /// Fit the base model, then bootstrap it for intervals and p-values.
    Bootstrap(BootstrapArgs),
    /// Run simulation cells and write plot-ready CSV summaries.
    Simulate(SimulateArgs),
    /// Re-render a saved JSON report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Model formula, e.g. "y ~ x1 + x2 + (1|subject)".
    #[arg(long)]
    pub formula: String,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Where to write the run manifest; defaults to a file beside --output.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Add a worked example moving this mean proportion by one unit of each covariate.
    #[arg(long)]
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Block,
    Pigeonhole,
}

impl Mode {
    fn resample_mode(self) -> ResampleMode {
        match self {
            Mode::Block => ResampleMode::SingleFactorBlock,
            Mode::Pigeonhole => ResampleMode::PigeonholeTwoWay,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Mode::Block => "block",
            Mode::Pigeonhole => "pigeonhole",
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, default_value_t = 15000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed for all resampling; a fresh one is generated and printed if omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 or absent uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Block)]
    pub mode: Mode,
    /// Factor to resample, overriding the automatic choice. Give it twice
    /// for pigeonhole mode.
    #[arg(long = "factor")]
    pub factors: Vec<String>,
    /// Largest tolerated fraction of failed refits before aborting.
    #[arg(long, default_value_t = 0.01)]
    pub max_failure_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Noise {
    Beta,
    Uniform,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory for cells.csv, widths.csv, summary.json and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Noise scale for beta outcomes; repeat for several cells.
    #[arg(long = "rho", default_values_t = vec![0.6])]
    pub rhos: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Noise::Beta)]
    pub noise: Noise,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    /// Number of covariates besides the intercept.
    #[arg(long, default_value_t = 3)]
    pub fixed: usize,
    /// Level count per grouping factor; give it twice for two factors.
    #[arg(long = "levels", default_values_t = vec![40])]
    pub levels: Vec<usize>,
    /// With two factors, cross them instead of nesting the second in the first.
    #[arg(long)]
    pub crossed: bool,
    /// Draw non-zero slopes instead of the null design.
    #[arg(long)]
    pub non_null: bool,
    /// Run the full factorial grid instead of a single design.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = 1.0)]
    pub random_effect_variance: f64,
    #[arg(long, default_value_t = 0.5)]
    pub fixed_effect_sd: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `fit` or `bootstrap` with --format json.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<f64>,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Bootstrap(a) => run_bootstrap_command(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Report(a) => run_report(a),
    }
}

/// A seed from the process's hashing randomness and the clock.
fn fresh_seed() -> u64 {
    use std::hash::BuildHasher;
    std::collections::hash_map::RandomState::new().hash_one(std::time::SystemTime::now())
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = fresh_seed();
        eprintln!("seed: {s} (pass --seed {s} to replay this run)");
        s
    })
}

fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn finish(report: &mut Report, out: &OutputArgs, manifest: &mut RunManifest, started: Instant) -> CliResult<()> {
    if let Some(p) = out.baseline {
        report.interpret(p)?;
    }
    emit(&report.render(out.format)?, out.output.as_deref())?;
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    let path = out.manifest.clone().or_else(|| out.output.as_deref().map(manifest::beside));
    if let Some(path) = path {
        manifest.write(&path)?;
    }
    Ok(())
}

fn load(model: &ModelArgs) -> CliResult<(Formula, quasiboot::ObservationTable, quasiboot::ModelSpec)> {
    let formula = parse_formula(&model.formula)?;
    let (table, spec) = ingest_csv(&model.data, &formula)?;
    Ok((formula, table, spec))
}

fn model_manifest(command: &str, model: &ModelArgs) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.input = Some(model.data.display().to_string());
    m.formula = Some(model.formula.clone());
    m
}

fn run_fit(args: FitArgs) -> CliResult<()> {
    let started = Instant::now();
    let (formula, table, spec) = load(&args.model)?;
    let base = fit(&table, &spec).map_err(CliError::Fit)?;
    let mut report = Report::from_fit(&formula.text, table.n(), &base);
    let mut manifest = model_manifest("fit", &args.model);
    finish(&mut report, &args.output, &mut manifest, started)
}

fn run_bootstrap_command(args: BootstrapArgs) -> CliResult<()> {
    let started = Instant::now();
    let (formula, table, spec) = load(&args.model)?;
    let seed = resolve_seed(args.seed);
    let config = BootstrapConfig {
        resamples: args.resamples,
        alpha: args.alpha,
        seed,
        max_failure_fraction: args.max_failure_fraction,
        workers: Workers::from_count(args.workers),
        mode: args.mode.resample_mode(),
        factors: args.factors.clone(),
    };
    config.validate().map_err(CliError::from_core)?;
    let base = fit(&table, &spec).map_err(CliError::Fit)?;
    let output = run_bootstrap_with_base(&table, &spec, &base, &config).map_err(CliError::from_core)?;
    let inference = InferenceReport::build(&base, &output, args.alpha).map_err(CliError::from_core)?;
    let mut report = Report::with_bootstrap(&formula.text, table.n(), &base, &inference);

    let mut manifest = model_manifest("bootstrap", &args.model);
    manifest.resamples = Some(args.resamples);
    manifest.alpha = Some(args.alpha);
    manifest.seed = Some(seed);
    manifest.workers = args.workers;
    manifest.mode = Some(args.mode.name().to_string());
    manifest.factors = output.settings.factors.clone();
    finish(&mut report, &args.output, &mut manifest, started)
}

fn run_report(args: ReportArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Ingest(format!("{}: {e}", args.input.display())))?;
    let mut report = Report::from_json(&text)?;
    if let Some(p) = args.baseline {
        report.interpret(p)?;
    }
    emit(&report.render(args.format)?, args.output.as_deref())
}

/// One line of `cells.csv`.
#[derive(Debug, Serialize)]
struct CellRow<'a> {
    cell_id: &'a str,
    rho: Option<f64>,
    min_levels: usize,
    replicates_ok: usize,
    replicates_failed: usize,
    pooled_bootstrap_rejection: f64,
    pooled_base_rejection: f64,
    pooled_bootstrap_coverage: f64,
    band_lower: f64,
    band_upper: f64,
    mean_width_ratio: f64,
    oracle_gap_in_se: Option<f64>,
}

impl<'a> From<&'a CellSummary> for CellRow<'a> {
    fn from(s: &'a CellSummary) -> Self {
        Self {
            cell_id: &s.cell_id,
            rho: s.rho,
            min_levels: s.min_levels,
            replicates_ok: s.replicates_ok,
            replicates_failed: s.replicates_failed,
            pooled_bootstrap_rejection: s.pooled_bootstrap_rejection,
            pooled_base_rejection: s.pooled_base_rejection,
            pooled_bootstrap_coverage: s.pooled_bootstrap_coverage,
            band_lower: s.band_lower,
            band_upper: s.band_upper,
            mean_width_ratio: s.mean_width_ratio,
            oracle_gap_in_se: s.oracle_gap_in_se,
        }
    }
}

#[derive(Debug, Serialize)]
struct CellError {
    cell_id: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    metadata: Option<&'a SimMetadata>,
    cells: Vec<&'a CellSummary>,
    failed_cells: Vec<CellError>,
}

fn simulation_configs(args: &SimulateArgs, seed: u64) -> Vec<SimConfig> {
    let noises: Vec<NoiseModel> = match args.noise {
        Noise::Beta => args.rhos.iter().map(|&rho| NoiseModel::Beta { rho }).collect(),
        Noise::Uniform => vec![NoiseModel::Uniform],
    };
    let mut configs = if args.grid {
        SimConfig::grid(&noises, args.replicates, args.resamples, seed)
    } else {
        noises
            .iter()
            .map(|&noise| SimConfig {
                rows: args.rows,
                n_fixed: args.fixed,
                levels: args.levels.clone(),
                crossed: args.crossed,
                effects_null: !args.non_null,
                noise,
                replicates: args.replicates,
                resamples: args.resamples,
                seed,
                ..SimConfig::desk(0.6)
            })
            .collect()
    };
    for c in &mut configs {
        c.alpha = args.alpha;
        c.random_effect_variance = args.random_effect_variance;
        c.fixed_effect_sd = args.fixed_effect_sd;
    }
    configs
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Other(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> CliResult<()> {
    let started = Instant::now();
    let seed = resolve_seed(args.seed);
    let configs = simulation_configs(&args, seed);
    for c in &configs {
        c.validate().map_err(CliError::from_core)?;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    eprintln!("running {} cell(s)", configs.len());
    let outcomes = run_grid(&configs, Workers::from_count(args.workers));

    let mut done: Vec<&SimResult> = Vec::new();
    let mut failed_cells = Vec::new();
    for (c, o) in configs.iter().zip(&outcomes) {
        match o {
            Ok(r) => done.push(r),
            Err(e) => {
                eprintln!("cell {} failed: {e}", c.cell_id());
                failed_cells.push(CellError {
                    cell_id: c.cell_id(),
                    reason: e.to_string(),
                });
            }
        }
    }
    write_csv(&args.out_dir.join("cells.csv"), done.iter().map(|r| CellRow::from(&r.summary)))?;
    write_csv(&args.out_dir.join("widths.csv"), done.iter().flat_map(|r| &r.widths))?;
    let summary = SimulationSummary {
        metadata: done.first().map(|r| &r.metadata),
        cells: done.iter().map(|r| &r.summary).collect(),
        failed_cells,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(args.out_dir.join("summary.json"), json + "\n")?;

    let mut manifest = RunManifest::new("simulate");
    manifest.resamples = Some(args.resamples);
    manifest.alpha = Some(args.alpha);
    manifest.seed = Some(seed);
    manifest.workers = args.workers;
    manifest.mode = Some("block".into());
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.out_dir.join("manifest.json"))?;

    for r in &done {
        let s = &r.summary;
        println!(
            "{}: bootstrap rejection {:.3} (band [{:.3}, {:.3}]), base rejection {:.3}, width ratio {:.3}",
            s.cell_id,
            s.pooled_bootstrap_rejection,
            s.band_lower,
            s.band_upper,
            s.pooled_base_rejection,
            s.mean_width_ratio
        );
    }
    if done.is_empty() {
        return Err(CliError::Other("every simulation cell failed".into()));
    }
    Ok(())
}
