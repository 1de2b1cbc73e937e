use std::path::PathBuf;

use bsvie::oracle::OracleError;
use bsvie::paths::SimError;
use bsvie::problem::ProblemError;
use bsvie::solver::SolverError;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step}, epoch {epoch}; partial artifacts kept in {out}")]
    Divergence { step: usize, epoch: usize, out: PathBuf },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Divergence { .. } | Self::Numerical(_) => 3,
            Self::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Config(_) | SolverError::Contract(_) | SolverError::Problem(ProblemError::Invalid(_)) => Self::Config(e.to_string()),
            SolverError::Problem(ProblemError::Sim(SimError::InvalidSize(_) | SimError::InvalidParameter(_)))
            | SolverError::Sim(SimError::InvalidSize(_) | SimError::InvalidParameter(_)) => Self::Config(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BlowUp { .. } => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::InsufficientPaths { .. } => Self::Config(e.to_string()),
            OracleError::Sim(s) => s.into(),
            _ => Self::Numerical(e.to_string()),
        }
    }
}
