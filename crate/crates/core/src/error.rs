use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BemError {
    #[error("mesh not found: {0}")]
    MeshNotFound(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-triangular face at line {line} ({vertices} vertices)")]
    NonTriangularFace { line: usize, vertices: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),

    #[error("mesh is not closed")]
    OpenMesh,

    #[error("singular kernel evaluation (r = 0)")]
    SingularEvaluation,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("all-zero matrix passed to truncated pseudo-inverse")]
    ZeroMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("problem size {n} exceeds oracle guard {limit}")]
    OracleGuard { n: usize, limit: usize },

    #[error("series did not converge within {0} terms")]
    SeriesDivergence(usize),

    #[error("operator cache: {0}")]
    Cache(String),

    #[error("engine was built for the {expected:?} operator, not {got:?}")]
    KindMismatch {
        expected: crate::kernel::OperatorKind,
        got: crate::kernel::OperatorKind,
    },

    #[error("GMRES did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, BemError>;
