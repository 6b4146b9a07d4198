use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{op}: non-finite value produced from finite inputs")]
    Numerical { op: &'static str },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    ManifestParse { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: score {score} outside [1, 5]")]
    ScoreOutOfRange { path: PathBuf, line: usize, score: f64 },

    #[error("manifest {0} has no records")]
    EmptyManifest(PathBuf),

    #[error("fold {fold} is not in 1..={folds}")]
    InvalidFold { fold: usize, folds: usize },

    #[error("fold split leaves no training records (test fold {0})")]
    EmptyTrainSplit(usize),

    #[error("fold {0} has no records")]
    EmptyFold(usize),

    #[error("evaluation requires at least one sample")]
    EmptyTestSet,

    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),

    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint parameter {name}: stored shape {stored:?} does not match model shape {expected:?}")]
    CheckpointShape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("cannot decode image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Argument,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical { .. } | Error::Diverged { .. } => ErrorClass::Numerical,
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidFold { .. } => ErrorClass::Argument,
            _ => ErrorClass::Data,
        }
    }
}
