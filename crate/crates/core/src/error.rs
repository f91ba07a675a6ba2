use std::path::PathBuf;

/// Errors produced anywhere in the synthesis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("waveform too short: {len} samples, need at least {need}")]
    WaveTooShort { len: usize, need: usize },
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("zero-power signal: {0}")]
    ZeroPower(&'static str),
    #[error("empty text")]
    EmptyText,
    #[error("text of {chars} characters does not fit in {frames} frames")]
    TextTooLong { chars: usize, frames: usize },
    #[error("token id {0} out of vocabulary range")]
    TokenOutOfRange(usize),
    #[error("no non-speech frames in recording")]
    NoNonSpeech,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {0}")]
    Diverged(usize),
    #[error("duration overflow: {frames} frames exceeds max {max}")]
    DurationOverflow { frames: usize, max: usize },
    #[error("manifest record {id}: {reason}")]
    Manifest { id: String, reason: String },
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn format_err(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        reason: reason.into(),
    }
}
