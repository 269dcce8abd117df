use nalgebra::DVector;
use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid positive basis: {0}")]
    InvalidBasis(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("condition violated: b^2 k^2 + 2abke - 1 = {condition_value} >= 0")]
    ConditionViolated { condition_value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("no conforming epsilon: {0}")]
    NoConformingEpsilon(String),

    #[error("run failed at eps={eps}, seed={seed}, k={k}: {reason}")]
    Run {
        eps: f64,
        seed: u64,
        k: usize,
        reason: String,
        diverged: bool,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

/// The gradient-descent follower ran out of inner iterations before it could
/// certify its answer. Carries the last iterate and the best certificate seen.
#[derive(Debug, Clone, Error)]
#[error("follower oracle exhausted {iterations} iterations; best certificate {certificate:e} > target {target:e}")]
pub struct OracleError {
    pub iterations: usize,
    pub target: f64,
    pub certificate: f64,
    pub best_iterate: DVector<f64>,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes used by the command line tool.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const INSTANCE: i32 = 3;
    pub const ORACLE: i32 = 4;
    pub const DIVERGENCE: i32 = 5;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::InvalidBasis(_)
            | Error::NoConformingEpsilon(_)
            | Error::ConditionViolated { .. }
            | Error::TomlDe(_) => exit::CONFIG,
            Error::InvalidInstance(_) | Error::GenerationFailed { .. } => exit::INSTANCE,
            Error::Oracle(_) | Error::Run { diverged: false, .. } => exit::ORACLE,
            Error::Run { diverged: true, .. } => exit::DIVERGENCE,
            Error::Io(_) | Error::Csv(_) | Error::TomlSer(_) => exit::OTHER,
        }
    }
}
