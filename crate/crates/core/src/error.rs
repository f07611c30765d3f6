use thiserror::Error;

use crate::contracts::ContractId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A field (or field relation) breaks a configuration invariant.
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("modulation signal {value} exceeds bound m_max = {bound}")]
    ModulationBound { value: f64, bound: f64 },

    #[error("unbounded regime: delta = {delta} must be negative")]
    UnboundedRegime { delta: f64 },

    #[error("operator-norm calibration did not converge after {iterations} iterations")]
    Calibration { iterations: usize },

    #[error("contract {contract} precondition breached: {message}")]
    Precondition {
        contract: ContractId,
        message: String,
    },

    #[error("contract {contract} enforcement failed: {message}")]
    Enforcement {
        contract: ContractId,
        message: String,
    },

    #[error("no snapshot at t = {requested} s (nearest available: {nearest:?})")]
    MissingSnapshot {
        requested: f64,
        nearest: Vec<f64>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
