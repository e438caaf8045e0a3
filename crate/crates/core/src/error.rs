use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: {quantity} is not finite")]
    Diverged {
        epoch: usize,
        quantity: &'static str,
    },

    #[error("{0} is undefined for all-zero counts")]
    UndefinedMetric(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(source),
        }
    }

    /// True for errors caused by the caller's inputs rather than by the
    /// computation itself.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Diverged { .. } => false,
            Error::File { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}

/// Where in the input a parse error was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// 1-based line number.
    Line(usize),
    /// 1-based line and column.
    LineColumn(usize, usize),
    /// 0-based byte offset.
    Offset(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(line) => write!(f, "line {line}"),
            Location::LineColumn(line, col) => write!(f, "line {line}, column {col}"),
            Location::Offset(off) => write!(f, "byte {off}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("{field} is not a valid number")]
    InvalidNumber { field: &'static str },
    #[error("{field} out of range")]
    OutOfRange { field: &'static str },
    #[error("class {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("bad magic number")]
    BadMagic,
    #[error("unsupported format {0}")]
    UnsupportedFormat(String),
    #[error("unsupported maxval {0}, expected 255")]
    UnsupportedMaxval(u64),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("{0}")]
    Structure(String),
    #[error("expected {expected} values, found {found}")]
    Length { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind}, {location}")]
pub struct ParseError {
    pub location: Location,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn new(location: Location, kind: ParseErrorKind) -> Self {
        ParseError { location, kind }
    }

    pub fn at_line(line: usize, kind: ParseErrorKind) -> Self {
        Self::new(Location::Line(line), kind)
    }
}
