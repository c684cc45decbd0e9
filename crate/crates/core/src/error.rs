//! Crate-wide error type.

use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    ShapeMismatch(String),
    /// A factorization hit a non-positive pivot; the matrix is not
    /// positive-definite at working precision. For Hessians this means the
    /// damping factor must be increased.
    NotPositiveDefinite { pivot: usize },
    /// A matrix expected to be orthogonal (or skew-symmetric) is not,
    /// within the stated tolerance.
    NotOrthogonal { deviation: f64 },
    /// The operation only supports power-of-two dimensions.
    PowerOfTwoRequired(usize),
    /// Requested rank is outside `1..=min(rows, cols)`.
    RankOutOfRange { rank: usize, max: usize },
    /// The input tensor is empty where data is required.
    EmptyInput(&'static str),
    /// A linear system is singular at working precision.
    Singular(&'static str),
    /// A quantizer or recipe configuration violates its invariants.
    InvalidSpec(String),
    /// A parameter value is out of its documented range.
    InvalidArgument(String),
    /// A value that must be finite is NaN or infinite.
    NonFinite(&'static str),
    /// An iterative method failed to converge within its sweep budget.
    NoConvergence(&'static str),
    /// An error that occurred while processing a named layer at a named
    /// pipeline stage.
    Layer {
        layer: String,
        stage: &'static str,
        source: Box<Error>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NotPositiveDefinite { pivot } => write!(
                f,
                "non-positive pivot at index {pivot}: matrix is not positive-definite \
                 (for Hessians, increase the damping factor)"
            ),
            Error::NotOrthogonal { deviation } => {
                write!(
                    f,
                    "matrix fails orthogonality check (deviation {deviation:e})"
                )
            }
            Error::PowerOfTwoRequired(n) => {
                write!(f, "power-of-two dimension required, got {n}")
            }
            Error::RankOutOfRange { rank, max } => {
                write!(f, "rank {rank} out of range 1..={max}")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Singular(what) => write!(f, "singular system: {what}"),
            Error::InvalidSpec(msg) => write!(f, "invalid spec: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::NoConvergence(what) => write!(f, "no convergence: {what}"),
            Error::Layer {
                layer,
                stage,
                source,
            } => {
                write!(f, "layer '{layer}', stage '{stage}': {source}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

impl Error {
    /// Wrap an error with the layer name and pipeline stage it occurred in.
    pub fn at_layer(self, layer: &str, stage: &'static str) -> Error {
        Error::Layer {
            layer: String::from(layer),
            stage,
            source: Box::new(self),
        }
    }
}
