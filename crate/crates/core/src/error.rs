use thiserror::Error;

/// Errors produced by the cost model, the tuner and the config loader.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A tensor dimension does not divide evenly under the requested sharding.
    #[error("shape error on `{dim}`: {detail}")]
    Shape { dim: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    /// A profile lookup found no matching entry.
    #[error("missing profile entry for {0}")]
    Lookup(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The requested regime has no finite answer (e.g. failures outpace checkpointing).
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(dim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            dim,
            detail: detail.into(),
        }
    }
}
