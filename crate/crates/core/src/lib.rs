//! Bootstrap inference for quasi-binomial mixed models of proportions.
//!
//! Fits logit-link models with quasi-binomial likelihood and optional
//! random intercepts, resamples grouping-factor levels to build
//! bootstrap-t intervals and p-values, and simulates data to check them.

pub mod bootstrap;
pub mod error;
pub mod exec;
pub mod fit;
pub mod interpret;
pub mod model;
pub mod resample;
pub mod rng;
pub mod sim;
pub mod stats;

pub use bootstrap::{
    confidence_interval, p_value, quantile, run_bootstrap, run_bootstrap_with_base, t_statistics,
    BootstrapConfig, BootstrapOutput, CoefficientInference, InferenceReport, Replicate, ReplicateFailure,
};
pub use error::{Error, Result};
pub use exec::Workers;
pub use fit::{
    fit, fit_fixed, fit_fixed_with_offset, fit_from, fit_mixed, FitOptions, FitResult, RandomEffectEstimate,
};
pub use model::{
    logistic, quasi_gradient, quasi_log_likelihood, GroupingFactor, LinearPredictor, ModelSpec,
    ObservationTable, INTERCEPT,
};
pub use resample::{
    block_resample, pigeonhole_resample, select_bootstrap_factor, ResampleMode, ResamplePlan,
    ResampledTable,
};
