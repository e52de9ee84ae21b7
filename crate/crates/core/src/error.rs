use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that should agree do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An invalid setting, with a hint on how to fix it where one exists.
    #[error("configuration error: {0}")]
    Config(String),

    /// An index outside its valid range.
    #[error("index out of bounds: {0}")]
    Bounds(String),

    /// Input data that cannot be processed (non-finite values, unknown symbols, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A model file failed an integrity or format check.
    #[error("corrupt model file: {field}: {detail}")]
    Corrupt { field: &'static str, detail: String },

    /// An API used out of order.
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn corrupt(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Corrupt { field, detail: detail.into() }
    }
}
