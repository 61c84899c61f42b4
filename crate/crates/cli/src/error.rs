use std::fmt;

use flowgraft::api::ApiError;

/// Process exit codes. Kept in sync with the table in the README.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const DIAGNOSTICS: u8 = 2;
    pub const UNREACHABLE: u8 = 3;
    pub const REJECTED: u8 = 4;
    pub const SERVER: u8 = 5;
    pub const INSTANCE_FAILED: u8 = 6;
    pub const USAGE: u8 = 64;
}

#[derive(Debug)]
pub enum CliError {
    /// Bad local input: unreadable file, invalid JSON argument, bad document.
    Input(String),
    /// Server startup or runtime failure in `serve` and `sim`.
    Runtime(String),
    Unreachable(String),
    Rejected(ApiError),
    Server(String),
    /// A watched instance ended other than Completed.
    InstanceFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) | Self::Runtime(_) => exit::FAILURE,
            Self::Unreachable(_) => exit::UNREACHABLE,
            Self::Rejected(_) => exit::REJECTED,
            Self::Server(_) => exit::SERVER,
            Self::InstanceFailed(_) => exit::INSTANCE_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(m) | Self::Runtime(m) => f.write_str(m),
            Self::Unreachable(m) => write!(f, "cannot reach engine at {m}"),
            Self::Rejected(e) => {
                write!(f, "{} {}: {}", e.http_status, e.code, e.detail)?;
                for d in &e.diagnostics {
                    write!(f, "\n  {d}")?;
                }
                Ok(())
            }
            Self::Server(m) => write!(f, "engine error: {m}"),
            Self::InstanceFailed(m) => f.write_str(m),
        }
    }
}
