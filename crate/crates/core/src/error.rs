use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bad magic: expected {:?}, found {:?}", ascii(expected), ascii(found))]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("weight bundle: {0}")]
    Bundle(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{channels} channels cannot be split into {groups} groups")]
    ChannelGroupMismatch { channels: usize, groups: usize },
    #[error("guide is {guide_h}x{guide_w} but input {input_h}x{input_w} at ratio {ratio} requires {}x{}", input_h * ratio, input_w * ratio)]
    RatioMismatch {
        input_h: usize,
        input_w: usize,
        guide_h: usize,
        guide_w: usize,
        ratio: usize,
    },
    #[error("kernel row {pixel} sums to {sum}, expected 1 (softmax not applied?)")]
    RowNotNormalized { pixel: usize, sum: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch(_)
            | Error::ChannelGroupMismatch { .. }
            | Error::RatioMismatch { .. } => 3,
            Error::RowNotNormalized { .. } | Error::NonFiniteValue(_) | Error::CheckFailed(_) => 1,
            _ => 2,
        }
    }
}

fn ascii(bytes: &[u8]) -> String {
    bytes.escape_ascii().to_string()
}
