use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible. Shapes are `(rows, cols)`.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    InvalidConfig(String),
    /// A loss, weight or transition that must be finite was not.
    NonFinite(String),
    EmptyBuffer,
    TooManyParameters { count: usize, limit: usize },
    /// Eigendecomposition produced an eigenvalue below the PSD tolerance.
    NegativeEigenvalue(f64),
    NotSymmetric(String),
    SeriesTooShort { len: usize, needed: usize },
    MalformedLog(String),
    BadMagic,
    VersionMismatch { found: u32, expected: u32 },
    TruncatedCheckpoint,
    /// Structurally inconsistent checkpoint payload.
    CorruptCheckpoint(String),
    Io(io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::ShapeMismatch { op, left, right }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: shape mismatch between {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::EmptyBuffer => write!(f, "replay buffer is empty"),
            Error::TooManyParameters { count, limit } => write!(
                f,
                "dense Fisher oracle limited to {limit} parameters, got {count}"
            ),
            Error::NegativeEigenvalue(v) => {
                write!(f, "matrix is not positive semidefinite (eigenvalue {v:e})")
            }
            Error::NotSymmetric(what) => write!(f, "{what} is not symmetric"),
            Error::SeriesTooShort { len, needed } => write!(
                f,
                "series too short: {len} samples, filter needs at least {needed}"
            ),
            Error::MalformedLog(msg) => write!(f, "malformed run log: {msg}"),
            Error::BadMagic => write!(f, "bad magic: not a checkpoint file"),
            Error::VersionMismatch { found, expected } => write!(
                f,
                "checkpoint version mismatch: found {found}, expected {expected}"
            ),
            Error::TruncatedCheckpoint => write!(f, "truncated checkpoint payload"),
            Error::CorruptCheckpoint(what) => write!(f, "corrupt checkpoint: {what}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
