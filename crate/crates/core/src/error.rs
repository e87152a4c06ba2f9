use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty message")]
    EmptyMessage,
    #[error("generator/memory mismatch: generator {generator:o} does not fit in {width} bits")]
    GeneratorMemoryMismatch { generator: u32, width: u32 },
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("non-binary value {value} at position {index}")]
    NonBinary { index: usize, value: u8 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("oracle limit: brute force supports at most {max} message bits, got {requested}")]
    OracleLimit { max: usize, requested: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("non-finite loss {loss} at step {step} (batch snr {snr_db:.3} dB)")]
    NonFiniteLoss { step: u64, snr_db: f64, loss: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A configuration problem, located by line and/or key where possible.
#[derive(Debug, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn at_line(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), key: None, message: message.into() }
    }

    pub fn for_key(key: &str, message: impl Into<String>) -> Self {
        Self { line: None, key: Some(key.to_string()), message: message.into() }
    }

    pub fn missing(key: &str) -> Self {
        Self::for_key(key, "missing config key")
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, " [{key}]")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
