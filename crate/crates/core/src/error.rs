use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input table or schema failed validation.
    #[error("{message}{}", location(.row, .column))]
    Load {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(
        "coordinate descent did not converge after {sweeps} sweeps \
         (max coefficient change {gap:.3e} > tolerance {tolerance:.1e})"
    )]
    Convergence {
        sweeps: usize,
        gap: f64,
        tolerance: f64,
    },

    #[error("model is not identifiable: {0}")]
    Identifiability(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location(row: &Option<usize>, column: &Option<String>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r} (column `{c}`)"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" (column `{c}`)"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn load(row: Option<usize>, column: Option<&str>, message: impl Into<String>) -> Self {
        Error::Load {
            row,
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
