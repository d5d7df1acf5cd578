use std::io;
use std::path::{Path, PathBuf};

use cdclab::CdcError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing {what}: {} (run the command that produces it first)", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("{}: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Core(#[from] CdcError),
    /// Some span counts could not be designed; the rest were written.
    #[error("design failed for {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches `path` to I/O failures from the core library.
    pub fn at(path: &Path, err: CdcError) -> Self {
        match err {
            CdcError::Io(source) => CliError::io(path, source),
            CdcError::Format { detail, .. } => CliError::Corrupt {
                path: path.to_path_buf(),
                detail,
            },
            other => CliError::Core(other),
        }
    }

    /// 2 for usage and configuration problems, 1 for everything that went
    /// wrong while computing.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Missing { .. } => 2,
            CliError::Core(CdcError::Config(_) | CdcError::Parameter(_)) => 2,
            _ => 1,
        }
    }
}
