//! Two-way error split driving the process exit code: usage errors exit 2,
//! runtime failures exit 1.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong: bad flag values, malformed configs.
    Usage(String),
    /// The invocation was fine but the work failed: I/O, numerics, models.
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<maskexplain_core::Error> for CliError {
    fn from(e: maskexplain_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// An I/O failure annotated with the verb and path it happened on.
pub fn io_err(action: &str, path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("cannot {action} {}: {e}", path.display()))
}
