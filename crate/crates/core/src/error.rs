use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("oracle backend failure: {0}")]
    Backend(String),

    /// The oracle answered, but not in a form the protocol accepts.
    #[error("unparseable oracle response for {template}: {raw:?}")]
    Protocol { template: String, raw: String },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("solver did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("constraint is infeasible: {0}")]
    Infeasible(String),

    #[error("edit lineage mismatch: {0}")]
    Lineage(String),

    #[error("factor elicitation failed: {0}")]
    Elicitation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("content hash mismatch for {path}: expected {expected}, computed {computed}")]
    HashMismatch {
        path: String,
        expected: String,
        computed: String,
    },

    #[error("unknown schema version {found} for {kind} (supported: {supported}); migration required")]
    UnknownVersion {
        kind: String,
        found: u32,
        supported: u32,
    },

    #[error("storage failure: {0}")]
    Storage(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
