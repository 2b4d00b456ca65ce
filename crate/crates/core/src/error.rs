//! Error surface shared by every stage of the pipeline.

use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One validation problem found while reading or checking a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based data row number (header excluded); 0 for whole-sample issues.
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.row == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "row {}: {}", self.row, self.message)
        }
    }
}

/// Pipeline stage an upstream error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fit,
    Gram,
    Bootstrap,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Fit => "fit",
            Stage::Gram => "gram",
            Stage::Bootstrap => "bootstrap",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter outside admissible region for {family}: {detail}")]
    ParameterDomain { family: &'static str, detail: String },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("survival function saturated at x = {x} (1 - F < 1e-300)")]
    Saturation { x: f64 },

    #[error("degenerate truncation window [{u}, {v}]: F(v) - F(u) = {mass:e}")]
    DegenerateWindow { u: f64, v: f64, mass: f64 },

    #[error("scheme {scheme} is not supported for family {family}")]
    UnsupportedPairing { scheme: &'static str, family: &'static str },

    #[error("invalid sample: {}", join_issues(.0))]
    Validation(Vec<RowIssue>),

    #[error("model not identifiable from sample: {0}")]
    NonIdentifiable(String),

    #[error("MLE did not converge after {iterations} iterations (|score|_inf = {grad_norm:e}); trace: {trace:?}")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        trace: Vec<f64>,
    },

    #[error("score matrix is rank deficient (condition number {condition:e})")]
    SingularScore { condition: f64 },

    #[error("runaway truncation: acceptance rate {rate:e} below 1e-4")]
    RunawayTruncation { rate: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing data file {path}: {hint}")]
    MissingData { path: String, hint: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_issues(issues: &[RowIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// Innermost error, looking through stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 validation, 3 numeric failure, 4 missing data.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::MissingData { .. } => 4,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 4,
            Error::Saturation { .. }
            | Error::DegenerateWindow { .. }
            | Error::NonIdentifiable(_)
            | Error::NonConvergence { .. }
            | Error::SingularScore { .. }
            | Error::RunawayTruncation { .. } => 3,
            _ => 2,
        }
    }
}
