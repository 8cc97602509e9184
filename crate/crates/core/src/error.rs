use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tree depth {0} exceeds the supported maximum of {max}", max = crate::tree::MAX_DEPTH)]
    DepthOverflow(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value {value} outside the state space {space}")]
    OutOfDomain { value: f64, space: String },
    #[error("empty bandwidth grid: {0}")]
    EmptyGrid(String),
    #[error("quadrature did not converge on [{a}, {b}] (error estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },
    #[error("root not bracketed: {0}")]
    NotBracketed(String),
    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),
    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
