use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GsrError>;

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation => 1,
            ErrorClass::Numerical => 2,
            ErrorClass::Io => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum GsrError {
    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed row at row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("non-finite feature at row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },

    #[error("label out of range at row {row}: {label} >= {n_classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        n_classes: usize,
    },

    #[error("group out of range at row {row}: {group} >= {n_groups}")]
    GroupOutOfRange {
        row: usize,
        group: usize,
        n_groups: usize,
    },

    #[error("group {0} has no samples")]
    EmptyGroup(usize),

    #[error("dataset has no group labels")]
    MissingGroups,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("inner solve did not converge after {iters} iterations (gradient inf-norm {grad_norm:.3e})")]
    NotConverged { iters: usize, grad_norm: f64 },

    #[error("line search failed at iteration {iter}: {reason}")]
    LineSearch { iter: usize, reason: String },

    #[error("inner optimality violated: gradient inf-norm {grad_norm:.3e} exceeds {limit:.3e}")]
    NotStationary { grad_norm: f64, limit: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("iterative solve did not reach residual {tol:.1e} in {iters} iterations (residual {residual:.3e})")]
    SolveNotConverged {
        iters: usize,
        tol: f64,
        residual: f64,
    },

    #[error("weights off the simplex: {0}")]
    OffSimplex(String),

    #[error("outer step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<GsrError>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GsrError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl GsrError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GsrError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GsrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn at_stage(stage: &'static str) -> impl FnOnce(GsrError) -> GsrError {
        move |e| GsrError::Stage {
            stage,
            source: Box::new(e),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            GsrError::NotConverged { .. }
            | GsrError::LineSearch { .. }
            | GsrError::NotStationary { .. }
            | GsrError::Factorization(_)
            | GsrError::SolveNotConverged { .. }
            | GsrError::NonFinite(_) => ErrorClass::Numerical,
            GsrError::Io { .. } => ErrorClass::Io,
            GsrError::AtStep { source, .. } | GsrError::Stage { source, .. } => source.class(),
            _ => ErrorClass::Validation,
        }
    }
}
