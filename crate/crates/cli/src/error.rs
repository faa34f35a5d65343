use rkn_core::Error;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                Error::InvalidParameter(_) => EXIT_USAGE,
                Error::Numeric(_) | Error::NumericAt { .. } | Error::Diverged { .. } => {
                    EXIT_DIVERGED
                }
                _ => EXIT_IO,
            },
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}
