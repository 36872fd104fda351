use std::io;
use std::path::PathBuf;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario {}: {source}", path.display())]
    Scenario { path: PathBuf, source: hfl_core::Error },
    #[error("bad checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] hfl_core::Error),
}

impl SimError {
    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            SimError::Read { .. } | SimError::Parse { .. } | SimError::Scenario { .. } | SimError::Checkpoint { .. } => 1,
            SimError::Core(e) if is_validation(e) => 1,
            SimError::Core(_) | SimError::Write { .. } => 2,
        }
    }
}

fn is_validation(e: &hfl_core::Error) -> bool {
    use hfl_core::{Error, Phase};
    match e {
        Error::Validation { .. } => true,
        Error::InPhase { phase, source } => *phase == Phase::Initial || is_validation(source),
        _ => false,
    }
}
