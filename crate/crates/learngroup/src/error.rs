use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by grouping, encoding, allocation, simulation, and the
/// file-format parsers.
#[derive(Debug)]
pub enum Error {
    /// A group count outside the supported range (1..=32, and no larger than
    /// the smaller layer dimension).
    InvalidGroupCount { groups: usize, max: usize },
    /// Two operands that must agree in shape do not.
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Vector operands of unequal length.
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A grouping matrix entry was NaN or infinite.
    NonFinite { row: usize, col: usize },
    /// A group index at or beyond the group count.
    IndexOutOfRange { index: usize, bound: usize },
    /// An index list referenced a sparse-row-memory slot that was never
    /// generated.
    EmptySlot { group: usize },
    /// Core count of zero, or otherwise unusable partition request.
    InvalidCoreCount { cores: usize },
    /// A malformed dump, config, or report file.
    Parse { line: usize, msg: String },
    /// Semantically invalid configuration (empty sweep lists, bad knobs).
    Config(String),
    /// Gradient or forward pass produced a non-finite value.
    Numeric(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGroupCount { groups, max } => {
                write!(f, "group count {groups} outside supported range 1..={max}")
            }
            Error::ShapeMismatch {
                what,
                expected,
                got,
            } => write!(
                f,
                "{what}: shape mismatch, expected {}x{} got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::LengthMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: length mismatch, expected {expected} got {got}"),
            Error::NonFinite { row, col } => {
                write!(f, "non-finite entry at ({row}, {col})")
            }
            Error::IndexOutOfRange { index, bound } => {
                write!(f, "group index {index} out of range (bound {bound})")
            }
            Error::EmptySlot { group } => {
                write!(f, "sparse row memory slot {group} was never generated")
            }
            Error::InvalidCoreCount { cores } => write!(f, "invalid core count {cores}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
