use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter vector has {got} entries, tier {tier} expects {expected}")]
    DimensionMismatch {
        tier: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("no tier has dimension {0}")]
    UnknownDimension(usize),

    #[error("unknown tier label `{0}`")]
    UnknownTier(String),

    #[error("parameter vector entry {index} = {value} is outside [0, 1]")]
    OutOfUnitRange { index: usize, value: f64 },

    #[error("parameter `{0}` is not part of tier {1}")]
    ParamNotInTier(&'static str, &'static str),

    #[error("preset: missing field `{0}`")]
    PresetMissingField(String),

    #[error("preset: unknown key `{0}`")]
    PresetUnknownKey(String),

    #[error("preset: format_version {found} is not supported (expected {expected})")]
    PresetVersion { found: i64, expected: i64 },

    #[error("preset: {0}")]
    PresetSyntax(String),

    #[error("invalid render request: {0}")]
    InvalidRequest(String),

    #[error("population mixes parameter vectors of different tiers")]
    MixedTiers,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target is unvoiced")]
    Unvoiced,

    #[error("no voiced note segments found in the input")]
    NoVoicedSegments,

    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
