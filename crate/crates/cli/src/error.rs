use std::path::PathBuf;
use std::process::ExitCode;

use emacv::ErrorCategory;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] emacv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error("cannot open input {path}: {source}")]
    Input {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for configuration problems, 3 for bad or missing data, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numerical => 4,
            },
            CliError::Config(_) | CliError::ConfigFile { .. } => 2,
            CliError::Input { .. } | CliError::Output { .. } => 3,
        };
        ExitCode::from(code)
    }
}

pub type CliResult<T> = Result<T, CliError>;
