//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by graph construction, kernels, solvers, and data IO.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Array dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The volume constraints admit no clustering.
    #[error("infeasible volume constraints: {0}")]
    Infeasible(String),

    /// Spectral routines require a connected graph.
    #[error("graph is disconnected ({components} connected components)")]
    Disconnected { components: usize },

    /// The iterative eigensolver failed its residual check.
    #[error("eigensolver did not converge: worst residual {residual:.3e} exceeds {tolerance:.3e} after {iterations} iterations")]
    EigenNonConvergence {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// Binary input ended early or carried a bad header.
    #[error("malformed data in {path} at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    /// Text input broke the expected record layout.
    #[error("malformed data in {path} at line {line}: {reason}")]
    FormatLine {
        path: String,
        line: usize,
        reason: String,
    },

    /// An internal consistency check failed; indicates a bug, not bad input.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    /// Underlying IO failure, annotated with the path involved.
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
