use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design matrix is rank deficient (singular value ratio {ratio:.3e})")]
    SingularDesign { ratio: f64 },

    #[error("complete separation detected (max |linear predictor| {max_eta:.1})")]
    Separation { max_eta: f64 },

    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("infeasible noise parameters: {0}")]
    Infeasible(String),

    #[error("no successful replicates in simulation cell {cell}; first failure: {first_reason}")]
    NoSuccessfulReplicates { cell: String, first_reason: String },

    #[error(
        "bootstrap aborted: {failed} of {total} replicates failed (limit {limit:.2}%); first failure: {first_reason}"
    )]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: f64,
        first_reason: String,
    },
}
