use nalgebra::DVector;

use crate::maps::MapKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sequence `{id}` is invalid: {reason}")]
    InvalidSequence { id: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rank pooling did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    SolverDidNotConverge {
        best: DVector<f64>,
        grad_norm: f64,
        iterations: usize,
    },

    /// The supplied solution is not a stationary point, so implicit
    /// differentiation does not apply.
    #[error("solution is not stationary: gradient norm {grad_norm:e} exceeds tolerance {tol:e}")]
    NotConverged { grad_norm: f64, tol: f64 },

    #[error("degenerate rank-one update {index}: denominator {denominator:e}")]
    DegenerateUpdate { index: usize, denominator: f64 },

    #[error("singular matrix: pivot breakdown at column {column}")]
    SingularMatrix { column: usize },

    #[error("recursive rank pooling needs at least 2 frames, got {len}")]
    PrefixTooShort { len: usize },

    #[error("training labels are degenerate: {0}")]
    DegenerateLabels(String),

    #[error("map `{0}` has no derivative here")]
    UnsupportedMap(MapKind),

    #[error("window starting at frame {start}: {source}")]
    Window { start: usize, source: Box<Error> },

    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: Box<Error> },

    #[error("sample `{id}`: {source}")]
    Sample { id: String, source: Box<Error> },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::SolverDidNotConverge { .. }
            | Error::NotConverged { .. }
            | Error::DegenerateUpdate { .. }
            | Error::SingularMatrix { .. } => true,
            Error::Window { source, .. } | Error::Layer { source, .. } | Error::Sample { source, .. } => {
                source.is_numeric()
            }
            _ => false,
        }
    }

    pub(crate) fn in_window(self, start: usize) -> Self {
        Error::Window {
            start,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }

    pub fn in_sample(self, id: &str) -> Self {
        Error::Sample {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}
