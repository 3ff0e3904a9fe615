//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in the pipeline.
///
/// Variants split into two families: input/configuration problems
/// (bad schema, unparseable cells, inconsistent options) and numerical
/// failures (degenerate data, divergence, non-convergence). The CLI maps
/// the first family to exit status 2 and the second to 3; see
/// [`Error::is_input_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown column: {0}")]
    UnknownColumn(String),

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("fit diverged: {0}")]
    Divergence(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),
}

impl Error {
    /// True for errors caused by inputs or configuration rather than by
    /// the numerics of a fit.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Parse { .. }
                | Error::UnknownColumn(_)
                | Error::MissingValue { .. }
                | Error::Invalid(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
