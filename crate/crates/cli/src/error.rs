use std::fmt;

/// CLI-level error with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed inputs, bad configuration, unreadable files (exit 2).
    Input(String),
    /// Numerical failures during fitting or diagnostics (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<zinb_core::Error> for CliError {
    fn from(e: zinb_core::Error) -> Self {
        match e {
            zinb_core::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
