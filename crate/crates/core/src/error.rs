use alloc::string::String;

/// Errors raised by the forecasting core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel unrecoverable: channel {0} has no observed values")]
    ChannelUnrecoverable(usize),
    #[error("preprocess order violation: non-finite value in channel {channel} at row {row}")]
    PreprocessOrder { row: usize, channel: usize },
    #[error("degenerate channel: channel {0} has zero variance")]
    DegenerateChannel(usize),
    #[error("segment of length 0 in split ({0})")]
    EmptySegment(&'static str),
    #[error("odd-length input ({0}) to a single DWT level")]
    OddLength(usize),
    #[error("decomposition depth {levels} out of range 1..={max}")]
    LevelsOutOfRange { levels: usize, max: usize },
    #[error("period exceeds window: period {period} > length {len}")]
    PeriodExceedsWindow { period: usize, len: usize },
    #[error("non-finite amplitude at index {0}")]
    NonFiniteAmplitude(usize),
    #[error("numeric overflow: non-finite value in {0}")]
    NumericOverflow(&'static str),
    #[error("diverged: non-finite loss at epoch {0}")]
    Diverged(usize),
    #[error("non-finite prediction at step {0}")]
    NonFinitePrediction(usize),
    #[error("series too short: {0}")]
    TooShort(String),
    #[error("metrics input: {0}")]
    Metrics(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
