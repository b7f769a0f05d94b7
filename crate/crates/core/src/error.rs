use alloc::string::String;

/// Errors raised by the schemes, estimators and oracles.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Non-finite numbers, wrong dimensions, malformed shapes.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An operation was called outside its domain of definition.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// The explicit penalty step would overshoot (`dt * n > 1`).
    #[error("unstable penalty step: dt * n = {product} exceeds 1")]
    Stability { product: f64 },
    /// A path state left the closed domain where it must stay inside.
    #[error("corrupted path state: {0}")]
    CorruptedState(String),
    /// Statistics cannot be formed from the sampled data.
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    /// A linear solve or iteration failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;

pub(crate) fn ensure_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(alloc::format!(
            "{what} has non-finite entries: {v:?}"
        )))
    }
}
