use alloc::string::String;

/// Errors raised by the core routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("class {class} has {available} samples but {requested} were requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("invalid long-tail spec: {0}")]
    InvalidSpec(String),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("class {class} has positive sampling probability but no indexed samples")]
    EmptyClass { class: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid_param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
