use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate row for {key}")]
    DuplicateRow { line: u64, key: String },
    #[error("insufficient overlap: {have} co-present minutes, need {need}")]
    InsufficientOverlap { have: usize, need: usize },
    #[error("window too short: {minutes} minutes")]
    WindowTooShort { minutes: i64 },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("overlapping slowdown profiles at {0}")]
    Overlap(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
}

impl Error {
    /// Stable machine-readable code used in diagnostics logs.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EMPTY_INPUT",
            Error::OutOfRange(_) => "OUT_OF_RANGE",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::DuplicateRow { .. } => "DUPLICATE_ROW",
            Error::InsufficientOverlap { .. } => "INSUFFICIENT_OVERLAP",
            Error::WindowTooShort { .. } => "WINDOW_TOO_SHORT",
            Error::DegenerateSample(_) => "DEGENERATE_SAMPLE",
            Error::Overlap(_) => "OVERLAP",
            Error::InvalidParameter(_) => "INVALID_PARAMETER",
            Error::UnknownSegment(_) => "UNKNOWN_SEGMENT",
        }
    }
}
