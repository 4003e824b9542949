use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: invalid field `{field}`: {msg}", path.display())]
    Spec { path: PathBuf, field: String, msg: String },
    #[error(transparent)]
    Core(#[from] l20mc_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use l20mc_core::Error as E;
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(E::BacktrackingBreakdown(_) | E::SvdFailure) => EXIT_SOLVER,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
