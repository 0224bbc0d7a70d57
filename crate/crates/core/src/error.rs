use thiserror::Error;

use crate::fxp::FxFormat;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),

    #[error("non-finite input {0}")]
    NonFinite(f64),

    #[error("format mismatch: expected {expected}, got {actual}")]
    FormatMismatch {
        expected: FxFormat,
        actual: FxFormat,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input")]
    Empty,

    #[error("match vector has no set bit")]
    NoMatch,

    #[error("match vector is not one-hot ({0} bits set)")]
    NotOneHot(usize),

    #[error("row {row} out of range for a {rows}-row crossbar")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("subtraction drive rows inverted: x_i row {xi_row} precedes max row {max_row}")]
    DriveOrder { xi_row: usize, max_row: usize },

    #[error("sign-stripping a positive difference ({0})")]
    PositiveDifference(f64),

    #[error("vector length {len} exceeds the {max}-row CAM/SUB crossbar")]
    TooLong { len: usize, max: usize },

    #[error("negative count {count} at row {row}")]
    NegativeCount { row: usize, count: i64 },

    #[error("division by zero")]
    DivideByZero,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("non-positive {0}")]
    NonPositive(&'static str),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("csv: {0}")]
    Csv(String),
}
