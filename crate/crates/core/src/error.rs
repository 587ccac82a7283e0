use crate::model::Predictor;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        column: u64,
        message: String,
    },

    #[error("spec error: {0}")]
    Spec(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("transformation has no entry for cell (group {group}, value {value})")]
    MissingCell { group: usize, value: f64 },

    #[error("rate undefined: {0}")]
    RateUndefined(String),

    #[error("training did not converge: best violation {violation} after {iterations} updates")]
    NonConvergence {
        best: Box<Predictor>,
        violation: f64,
        iterations: usize,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration budget exceeded: {needed} candidates > limit {limit}")]
    Budget { needed: u128, limit: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::Infeasible(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
