//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, validation, and the engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("operator is not Hermitian (max deviation {deviation:.3e} > {tol:.1e})")]
    NotHermitian { deviation: f64, tol: f64 },

    #[error("scenario is invalid:\n{0}")]
    InvalidScenario(crate::model::ValidationReport),

    #[error("postselection probability {value:.3e} for outcome '{label}' is below floor {floor:.1e}")]
    PostselectionFloor {
        label: String,
        value: f64,
        floor: f64,
    },

    #[error("weak-value denominator {value:.3e} for outcome '{label}' is below floor {floor:.1e} (near-orthogonal pre/postselection)")]
    DenominatorFloor {
        label: String,
        value: f64,
        floor: f64,
    },

    #[error("conditional-average denominator {value:.3e} is not positive: perturbative regime breakdown")]
    RegimeBreakdown { value: f64 },

    #[error("effect trace {0:.3e} too small for retrodiction")]
    ZeroTraceEffect(f64),

    #[error("unknown preset '{0}' (expected aav_gaussian, qubit_qubit, random_seeded or taylor_negativity)")]
    UnknownPreset(String),

    #[error("no outcome labelled '{0}'")]
    UnknownLabel(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
