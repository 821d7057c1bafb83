use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("eigendecomposition did not converge after {iterations} iterations")]
    EigenNoConvergence { iterations: usize },

    #[error("phi index i={i} exceeds the cap {cap}")]
    PhiCapExceeded { i: usize, cap: usize },

    #[error("Jensen-gap constant undefined: phi(2k,2) = {0} is not positive")]
    JensenGapUndefined(f64),

    #[error("negative bound constant C = {0}")]
    NegativeBoundConstant(f64),

    #[error("trust-region secular equation not bracketed: {0}")]
    TrustRegionBracket(String),

    #[error("unstable dynamics: {0}")]
    Unstable(String),

    #[error("DER undefined at zero error")]
    DerUndefined,

    #[error("EIR undefined at zero mean member error")]
    EirUndefined,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
