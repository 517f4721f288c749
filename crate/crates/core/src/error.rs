use thiserror::Error;

/// Errors produced by the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("failed to parse {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("neuron {neuron} has {boundary} boundary samples, above the enumeration cap of {cap}; use the sampling fallback")]
    CombinatorialBlowup {
        neuron: usize,
        boundary: usize,
        cap: usize,
    },

    #[error("finite-difference oracle inconclusive: {0}")]
    OracleInconclusive(String),

    #[error("training diverged at epoch {epoch}: non-finite parameters")]
    Divergence { epoch: usize },

    #[error("perturbation radius {zeta:e} exceeds the sector-safe cap {cap:e}")]
    PerturbationTooLarge { zeta: f64, cap: f64 },

    #[error("invalid argument: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
