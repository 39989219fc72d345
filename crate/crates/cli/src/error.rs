use std::fmt;
use std::process::ExitCode;

use toast_core::ToastError;

/// A failed command, tagged with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or invalid input. Exit 2.
    Input(anyhow::Error),
    /// Shapes disagree with the model config. Exit 3.
    Shape(anyhow::Error),
    /// Anything else. Exit 1.
    Internal(anyhow::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl fmt::Display) -> Self {
        CliError::Input(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Internal(_) => 1,
            CliError::Input(_) => 2,
            CliError::Shape(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = match self {
            CliError::Input(e) | CliError::Shape(e) | CliError::Internal(e) => e,
        };
        write!(f, "{e:#}")
    }
}

impl From<ToastError> for CliError {
    fn from(e: ToastError) -> Self {
        if e.is_shape_error() {
            CliError::Shape(e.into())
        } else {
            CliError::Input(e.into())
        }
    }
}

/// Attaches the offending path to errors raised while reading it.
pub trait InputContext<T> {
    fn reading(self, path: &std::path::Path) -> CliResult<T>;
}

impl<T> InputContext<T> for std::result::Result<T, ToastError> {
    fn reading(self, path: &std::path::Path) -> CliResult<T> {
        self.map_err(|e| match CliError::from(e) {
            CliError::Input(e) => CliError::Input(e.context(path.display().to_string())),
            CliError::Shape(e) => CliError::Shape(e.context(path.display().to_string())),
            other => other,
        })
    }
}
