use thiserror::Error;

/// Error categories for the whole crate. Each category maps to a distinct
/// CLI exit code so callers can tell config, weight, image, and schedule
/// failures apart without parsing messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("weights error: {0}")]
    Weights(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Weights(_) => 3,
            Error::Image(_) => 4,
            Error::Schedule(_) => 5,
            Error::Numeric(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
