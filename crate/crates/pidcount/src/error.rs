//! Crate-wide error type.
//!
//! Variants map onto the failure classes the pipeline distinguishes at the
//! process boundary: usage/config problems exit with code 1, data problems
//! with code 2, numerical failures (NaN aborts, degenerate inputs) with
//! code 3. See [`Error::exit_code`].

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or mask shapes are inconsistent with the operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value is out of range or keys are malformed.
    #[error("config error: {0}")]
    Config(String),

    /// Command-line usage error (bad flag, missing argument).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// An object was used after being consumed (for example a computation
    /// graph that has already run its backward pass).
    #[error("state error: {0}")]
    State(String),

    /// Dataset files are missing, unpaired, or unreadable as a dataset.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical failure such as a NaN loss or a degenerate input that
    /// leaves a quantity undefined.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code for this error class: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Shape(_)
            | Error::Validation(_)
            | Error::State(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Image(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
