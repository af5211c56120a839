//! Error taxonomy shared by the library and the CLI.

use thiserror::Error;

/// All failure modes surfaced by the crate. Each variant maps to a stable
/// machine-readable category string used by the CLI for exit reporting.
#[derive(Debug, Error)]
pub enum SgError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular seed: z2 = {z2} (must be positive)")]
    SingularSeed { z2: f64 },

    #[error("degenerate seed pair: {0}")]
    DegeneratePair(String),

    #[error("numerical integrity violation: {0}")]
    Numerics(String),

    #[error(
        "Newton solver did not converge: residual {residual:.3e} after {iterations} iterations"
    )]
    NonConvergence {
        residual: f64,
        iterations: usize,
        /// Last weight iterate, kept for post-mortem inspection.
        weights: Vec<f64>,
    },

    #[error("weight initialization failed: {0}")]
    Initialization(String),

    #[error("particle {index} blew up at step {step}: z2 = {z2}")]
    BlowUp { index: usize, step: usize, z2: f64 },

    #[error("undefined centroid: cell {index} has zero mass")]
    UndefinedCentroid { index: usize },

    #[error("stale solver state: {0}")]
    StaleState(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SgError {
    /// Stable category slug for machine consumption (CLI exit reporting).
    pub fn category(&self) -> &'static str {
        match self {
            SgError::Config(_) => "config",
            SgError::SingularSeed { .. } => "singular-seed",
            SgError::DegeneratePair(_) => "degenerate-pair",
            SgError::Numerics(_) => "numerics",
            SgError::NonConvergence { .. } => "non-convergence",
            SgError::Initialization(_) => "initialization",
            SgError::BlowUp { .. } => "blow-up",
            SgError::UndefinedCentroid { .. } => "undefined-centroid",
            SgError::StaleState(_) => "stale-state",
            SgError::Metric(_) => "metric",
            SgError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SgError::Io { path: path.into(), source }
    }
}
