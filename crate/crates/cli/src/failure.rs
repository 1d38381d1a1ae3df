use std::fmt;

use hsnn_core::Error;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitCode {
    Usage = 2,
    Io = 3,
    Numeric = 4,
    Verification = 5,
}

/// A command failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: ExitCode,
    pub message: String,
}

impl Failure {
    pub fn new(code: ExitCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitCode::Usage, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ExitCode::Io, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Dimension(_) | Error::Contract(_) | Error::Config(_) | Error::Build { .. } => ExitCode::Usage,
            Error::Io { .. } | Error::Format { .. } | Error::MissingFields(_) | Error::Resource(_) => ExitCode::Io,
            Error::Numeric { .. } | Error::Diverged { .. } => ExitCode::Numeric,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
