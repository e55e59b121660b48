use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward requires a scalar root, got shape {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("computation graph is not acyclic: node {node} references a later node")]
    GraphCycle { node: usize },

    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("cholesky factorization failed for every jitter in {ladder:?}")]
    Cholesky { ladder: Vec<f64> },

    #[error("parameter {index} has no gradient")]
    MissingGradient { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate point set ({0}); fall back to the hypercube region")]
    Degenerate(String),

    #[error("rejection sampling failed: {accepted} members in {trials} trials")]
    Rejection { trials: usize, accepted: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("normalization values have zero standard deviation")]
    ZeroSpread,

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
