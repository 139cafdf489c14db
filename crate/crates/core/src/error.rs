use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration/usage problems, numerical failures, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// exp() argument past the double-precision range guard.
    #[error("exponent overflow at quadrature node {node}: alpha·m = {exponent:.3e}")]
    Overflow { node: usize, exponent: f64 },

    /// Hessian factorization kept failing after the full regularization ladder.
    #[error(
        "dual Hessian factorization failed at ridge {ridge:.1e}; \
         moments are likely too close to the realizable boundary"
    )]
    BoundaryProximity { ridge: f64 },

    #[error("moments not realizable ({binding}, margin {margin:.3e})")]
    NotRealizable { margin: f64, binding: String },

    #[error("newton did not converge in cell {cell}: {detail}")]
    CellClosure { cell: usize, detail: String },

    #[error("realizability lost at step {step}, cell {cell}: {detail}")]
    SolverFailure { step: usize, cell: usize, detail: String },

    #[error("sampler diagnostics: {0}")]
    Sampler(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class used by the command-line front end:
    /// 1 usage/config, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Shape(_) | Error::Config(_) => 1,
            Error::Overflow { .. }
            | Error::BoundaryProximity { .. }
            | Error::NotRealizable { .. }
            | Error::CellClosure { .. }
            | Error::SolverFailure { .. }
            | Error::Sampler(_) => 2,
            Error::Parse { .. } | Error::ModelFormat(_) | Error::Io { .. } => 3,
        }
    }
}
