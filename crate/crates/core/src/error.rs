use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("loss vector is empty")]
    EmptyLosses,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("record `{id}` has no probability vector; conformal prediction requires full probability vectors")]
    MissingProbs { id: String },

    #[error("record `{id}` has no logits; temperature scaling requires logits")]
    MissingLogits { id: String },

    #[error("beta quantile did not converge (a={a}, b={b}, p={p}, last x={x}, residual={residual:e})")]
    NoConvergence {
        a: f64,
        b: f64,
        p: f64,
        x: f64,
        residual: f64,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("bound family `{0}` requires a source risk profile")]
    MissingSourceProfile(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
