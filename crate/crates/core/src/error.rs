use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("photon-number cutoff too small: truncated tail mass {tail:.3e} exceeds tolerance {tol:.1e}")]
    CutoffTooSmall { tail: f64, tol: f64 },

    #[error("truncation leakage {leak:.3e} exceeds tolerance {tol:.1e} ({context})")]
    Leakage {
        leak: f64,
        tol: f64,
        context: &'static str,
    },

    #[error("{quantity} = {value:.4} is outside the representable range (limit {limit:.4})")]
    Overflow {
        quantity: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate click record: {0}")]
    DegenerateRecord(&'static str),

    #[error("undefined ratio: {0}")]
    Division(&'static str),

    #[error("herald click probability is zero")]
    ZeroHerald,

    #[error("negative single-event probability: R_SA + R_SB < 2 R_C")]
    NegativeSingles,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("missing observable: {0}")]
    MissingObservable(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// True for failures of the numerical layer (truncation, overflow, undefined ratios)
    /// as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::CutoffTooSmall { .. }
                | Error::Leakage { .. }
                | Error::Overflow { .. }
                | Error::Division(_)
                | Error::ZeroHerald
                | Error::DegenerateRecord(_)
        )
    }
}
