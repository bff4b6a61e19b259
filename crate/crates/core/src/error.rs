use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shape of a 2-D tensor, `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension { op: &'static str, left: Shape, right: Shape },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("{op} needs at least one element")]
    Arity { op: &'static str },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    Rank(Shape),

    #[error("function evaluation is not finite: {0}")]
    Evaluation(String),

    #[error("non-finite gradient entry in {param}")]
    NumericalDivergence { param: String },

    #[error("need at least 2 samples on each side of the DV bound, got joint={joint} marginal={marginal}")]
    InsufficientSamples { joint: usize, marginal: usize },

    #[error("sample sets are not row-aligned: {what} ({left} vs {right})")]
    Alignment { what: String, left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ill-conditioned covariance (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("parse error in {path} at row {row}, column {col}: {cell:?}")]
    Parse { path: PathBuf, row: usize, col: usize, cell: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("class {class} has no samples")]
    Coverage { class: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dim(op: &'static str, left: Shape, right: Shape) -> Self {
        Error::Dimension { op, left, right }
    }
}
