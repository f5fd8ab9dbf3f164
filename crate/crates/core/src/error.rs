use thiserror::Error;

use crate::model::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes disagree with the network dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument lies outside the domain of the operation.
    #[error("invalid argument: {0}")]
    Domain(String),

    /// A configuration field failed validation.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The cone solver neither converged nor produced a certificate.
    #[error("solver indeterminate: {0}")]
    Indeterminate(String),

    /// Like [`Error::Indeterminate`], but raised mid-run with the trace so far.
    #[error("solver indeterminate after {} iterations: {reason}", .partial.iterations.len())]
    IndeterminateRun {
        reason: String,
        partial: Box<SolveReport>,
    },

    /// A power-minimisation target was not achievable.
    #[error("SINR target {0} is infeasible for this association")]
    InfeasibleTarget(f64),

    /// Exhaustive search was asked to enumerate too many links.
    #[error("exhaustive search refused: {links} links exceeds the cap of {cap}")]
    TooLarge { links: usize, cap: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for the solver-failure variants (CLI exit code 2).
    pub fn is_indeterminate(&self) -> bool {
        matches!(self, Error::Indeterminate(_) | Error::IndeterminateRun { .. })
    }
}
