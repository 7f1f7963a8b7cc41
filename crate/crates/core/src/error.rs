//! Error taxonomy shared across the crate, with the process exit code
//! each category maps to in the `sae` binary.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (unknown key, bad value,
    /// negative weight, architecture mismatch).
    #[error("config error: {0}")]
    Config(String),

    /// Dataset problems: missing files, count mismatches, empty splits.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values where finite ones are required (diverged loss,
    /// NaN gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed file contents (IDX magic, checkpoint header, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Tensor shape mismatch in an op.
    #[error("dimension error: {0}")]
    Dim(String),

    /// An operation's precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 2 config, 3 data, 4 numeric, 5 format,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
            Error::Format(_) => 5,
            Error::Io(_) => 3,
            Error::Dim(_) | Error::Contract(_) => 1,
        }
    }
}

/// Attaches the offending path to an I/O error.
pub fn io_context(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

pub type Result<T> = std::result::Result<T, Error>;
