use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PaseError>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum PaseError {
    #[error("empty audio")]
    EmptyAudio,
    #[error("audio of {samples} samples is shorter than one frame period ({required} samples)")]
    AudioTooShort { samples: usize, required: usize },
    #[error("invalid samples")]
    InvalidSamples,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: malformed alignment entry: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("non-monotonic alignment")]
    NonMonotonicAlignment,
    #[error("degenerate landmarks")]
    DegenerateLandmarks,
    #[error("empty clip")]
    EmptyClip,
    #[error("interval {start_s}..{end_s} s extends past the end of the audio ({duration_s} s)")]
    IntervalPastEnd {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("unknown phoneme: {0}")]
    UnknownPhoneme(String),
    #[error("no valid negatives")]
    NoValidNegatives,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("input too small for layer {layer}")]
    InputTooSmall { layer: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("divergence: non-finite loss at step {step}")]
    Divergence {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("invalid epsilon")]
    InvalidEpsilon,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("inconsistent header")]
    InconsistentHeader,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("phoneme(s) absent from corpus: {0}")]
    PhonemeAbsent(String),
    #[error("insufficient distractors: {0}")]
    InsufficientDistractors(String),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl PaseError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PaseError::Divergence { .. } => ErrorKind::Numerical,
            PaseError::InvalidConfig(_) | PaseError::InvalidEpsilon => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }

    /// Stable numeric code for feature-file errors (0 for everything else).
    pub fn feature_file_code(&self) -> u8 {
        match self {
            PaseError::BadMagic => 1,
            PaseError::UnsupportedVersion(_) => 2,
            PaseError::TruncatedHeader => 3,
            PaseError::TruncatedPayload => 4,
            PaseError::InconsistentHeader => 5,
            _ => 0,
        }
    }
}
