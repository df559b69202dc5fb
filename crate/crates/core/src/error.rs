use thiserror::Error;

/// Errors surfaced by the rescaling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("SVD did not converge within {0} sweeps")]
    SvdDidNotConverge(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint has bad magic bytes")]
    CheckpointBadMagic,

    #[error("checkpoint version {0} is not supported")]
    CheckpointUnknownVersion(u32),

    #[error("checkpoint dtype code {0} is not supported")]
    CheckpointUnknownDtype(u8),

    #[error("checkpoint file is truncated")]
    CheckpointTruncated,

    #[error("checkpoint has trailing bytes after the tensor table")]
    CheckpointTrailingData,

    #[error("checkpoint tensor name is not valid UTF-8")]
    CheckpointInvalidName,

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("image decode error: {0}")]
    ImageDecode(String),

    #[error("image encode error: {0}")]
    ImageEncode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
