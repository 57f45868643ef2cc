use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller violated an operation's contract (wrong lengths, missing
    /// inputs, out-of-range settings).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Timestamps are not uniformly spaced.
    #[error("timestamp gap: {0}")]
    Gap(String),

    /// NaN/Inf appeared where it must not, or training diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Checkpoint file is corrupt, truncated, or of an unknown version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code for the CLI: 1 usage, 2 data/contract, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
