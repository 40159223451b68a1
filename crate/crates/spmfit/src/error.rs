//! Error taxonomy for the pipeline.
//!
//! Configuration and usage problems map to CLI exit code 2, runtime failures
//! to exit code 1 (see `main.rs`).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value or inconsistent config file.
    #[error("config error: {0}")]
    Config(String),

    /// A scaling factor lies outside its declared range.
    #[error("scaling factor {name}={value} outside range [{lo}, {hi}]")]
    FactorRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A dimensional parameter that must be positive is zero or negative.
    #[error("singular parameter: {0}")]
    SingularParameter(String),

    /// Query point outside the model domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Time stepping produced a non-finite field.
    #[error("solver divergence: non-finite value at step {step}")]
    Divergence { step: usize },

    /// Normal-equations factorization failed even after the regularization
    /// retry.
    #[error("conditioning error: SPD factorization failed (lambda_pi={lambda_pi:.3e})")]
    Conditioning { lambda_pi: f64 },

    /// Equilibrium-potential curve evaluated outside its tabulated domain or
    /// produced a non-finite value.
    #[error("equilibrium-potential curve error: {0}")]
    CurveDomain(String),

    /// Input CSV does not match the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Too many malformed rows during ingestion.
    #[error("ingestion error: {rejected} of {total} rows rejected (limit 10%)")]
    Ingestion { rejected: usize, total: usize },

    /// A discharge curve had no usable samples.
    #[error("empty curve: {0}")]
    EmptyCurve(String),

    /// Artifact file format is unreadable or has the wrong version.
    #[error("artifact format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code class: 2 for configuration/usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::FactorRange { .. } | Error::Schema(_) => 2,
            _ => 1,
        }
    }
}
