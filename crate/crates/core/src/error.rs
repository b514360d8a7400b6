use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // manifest and frame ingestion
    #[error("manifest is missing column `{0}`")]
    MissingColumn(String),
    #[error("manifest row {row}: column `{col}` is not a valid number")]
    BadNumeric { row: usize, col: String },
    #[error("participant {0}: motility targets do not sum to roughly 100%")]
    TargetSumOutOfRange(String),
    #[error("participant {participant}: {reason}")]
    InvalidRecord { participant: String, reason: String },
    #[error("frame {0} could not be read")]
    UnreadableFrame(usize),
    #[error("frame {0} has dimensions that differ from the first frame")]
    InconsistentDimensions(usize),
    #[error("video has {frame_count} frames, need at least {length}")]
    VideoTooShort { frame_count: usize, length: usize },
    #[error("bad file format: {0}")]
    BadFormat(String),

    // pixel kernels
    #[error("expected {expected} channel(s), got {got}")]
    WrongChannelCount { expected: usize, got: usize },
    #[error("frame of {height}x{width} is smaller than the required {min}x{min}")]
    FrameTooSmall { height: usize, width: usize, min: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // representations
    #[error("stride {stride} from frame {start} runs past the end of the video ({frame_count} frames)")]
    StrideOutOfRange { start: usize, stride: usize, frame_count: usize },
    #[error("participant {0}: concentration requested but absent")]
    MissingConcentration(String),

    // models
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("network spec is inconsistent: {0}")]
    SpecShapeError(String),
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("unreadable checkpoint: {0}")]
    UnreadableCheckpoint(String),

    // evaluation
    #[error("need at least {k} participants, got {got}")]
    TooFewParticipants { k: usize, got: usize },
    #[error("unknown participant id `{0}`")]
    UnknownId(String),
    #[error("fold plans of the compared reports differ")]
    FoldPlanMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFiniteGradient | Error::NonFiniteLoss { .. } | Error::SpecShapeError(_) => 3,
            _ => 2,
        }
    }
}
