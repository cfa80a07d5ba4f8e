use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by dataset handling, basis construction and model fitting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("curve {id}: inconsistent label ({first} vs {second})")]
    InconsistentLabel {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("curve {id}: duplicate abscissa {x}")]
    DuplicateAbscissa { id: String, x: f64 },
    #[error("invalid curve {id}: {msg}")]
    InvalidCurve { id: String, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("knot {knot} outside data domain ({lo}, {hi})")]
    KnotOutsideDomain { knot: f64, lo: f64, hi: f64 },
    #[error("degenerate domain: abscissas span zero width")]
    DegenerateDomain,
    #[error("curves do not share a common grid (offending: {0})")]
    NonCommonGrid(String),
    #[error("segmentation infeasible: {m} points cannot host {segments} segments of length >= {min_len}")]
    InfeasibleSegmentation {
        m: usize,
        segments: usize,
        min_len: usize,
    },
    #[error("component {k} lost all posterior mass")]
    EmptyComponent { k: usize },
    #[error("numerically degenerate model: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model document error: {0}")]
    ModelDocument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
