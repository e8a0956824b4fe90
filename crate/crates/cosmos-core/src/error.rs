use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("invalid shape {rows}x{cols}: {reason}")]
    InvalidShape {
        rows: usize,
        cols: usize,
        reason: &'static str,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("degenerate vector: zero norm in sample {sample}")]
    DegenerateVector { sample: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("dropout rate {0} must lie in [0, 1)")]
    InvalidDropout(f64),
    #[error("training diverged at epoch {epoch}: {term} became non-finite")]
    Divergence { epoch: usize, term: &'static str },
    #[error("patch geometry error: {0}")]
    Geometry(String),
    #[error("data format error: {0}")]
    Format(String),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
