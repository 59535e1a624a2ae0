use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {index}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        width: u16,
        height: u16,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: byte offset {offset}: {msg}")]
    Binary {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("LED {marker_id} leaves the sensor at t = {t_us} us")]
    LedOutOfBounds { marker_id: u32, t_us: u64 },
    #[error("insufficient markers visible: found {found}, expected {expected}")]
    InsufficientMarkers { found: usize, expected: usize },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("series error: {0}")]
    Series(String),
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParam(_) => 2,
            Error::OutOfBounds { .. }
            | Error::Parse { .. }
            | Error::Binary { .. }
            | Error::Io { .. }
            | Error::LengthMismatch { .. } => 3,
            Error::Stage { source, .. } => match source.as_ref() {
                Error::Config(_) | Error::InvalidParam(_) => 2,
                Error::Parse { .. } | Error::Binary { .. } | Error::Io { .. } => 3,
                _ => 4,
            },
            _ => 4,
        }
    }
}
