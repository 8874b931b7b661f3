use std::fmt;
use std::process::ExitCode;

use hcd_core::Error as CoreError;

/// Process exit status. The numeric values are a stable contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { exit: Exit::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { exit: Exit::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError { exit: Exit::Numeric, message: message.into() }
    }

    /// Prefixes the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Library failures during a run: numeric blow-ups map to exit 3, anything
/// about the inputs to exit 2. Configuration is validated before a run
/// starts, so invalid-argument errors raised here concern the data.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite(_) | CoreError::Diverged { .. } => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub trait ResultExt<T> {
    /// Reclassifies any error as a usage error.
    fn usage(self) -> CliResult<T>;
    fn ctx(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> ResultExt<T> for Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| {
            let mut e = e.into();
            e.exit = Exit::Usage;
            e
        })
    }

    fn ctx(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
