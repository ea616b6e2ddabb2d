use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Cholesky factorization met a non-positive pivot.
    #[error("matrix is not positive definite: smallest pivot {pivot:e} ({context})")]
    Singular { pivot: f64, context: String },

    /// One or more chains of a multi-chain fit failed.
    #[error("chain(s) {indices:?} failed: {message}")]
    ChainsFailed { indices: Vec<usize>, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Singular { pivot, context } => Error::Singular {
                pivot,
                context: format!("{ctx}: {context}"),
            },
            Error::Contract(msg) => Error::Contract(format!("{ctx}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure;
