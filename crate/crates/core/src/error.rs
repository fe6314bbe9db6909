use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("{}: {source}", path.display())]
    File { path: std::path::PathBuf, source: io::Error },

    #[error("bad magic {found:?}, expected \"RSD1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected dump kind: expected {expected}, found {found}")]
    WrongKind { expected: &'static str, found: &'static str },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("truncated record (utterance {utterance_id:?})")]
    TruncatedRecord { utterance_id: String },

    #[error("malformed record (utterance {utterance_id:?}): {reason}")]
    MalformedRecord { utterance_id: String, reason: String },

    #[error("record count mismatch: header declares {declared}, got {actual}")]
    RecordCount { declared: u32, actual: u32 },

    #[error("no shared utterances between the two dumps")]
    NoSharedUtterances,

    #[error("zero aligned frames")]
    NoAlignedFrames,

    #[error("memory budget of {budget} bytes is below the {required} bytes needed for a single pair")]
    BudgetTooSmall { budget: u64, required: u64 },

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("missing cell for pair {0}")]
    MissingCell(String),

    #[error("duplicate cell for pair {0}")]
    DuplicateCell(String),

    #[error("csv parse error at row {row}, column {col}: {message}")]
    Csv { row: usize, col: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::BudgetTooSmall { .. } => ErrorKind::Usage,
            Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    /// Attaches a file path to an i/o error.
    pub fn at(path: &std::path::Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::File { path: path.to_path_buf(), source }
    }

    /// Maps a premature EOF onto a truncation error naming the utterance.
    pub(crate) fn truncated_or(e: io::Error, utterance_id: &str) -> Error {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::TruncatedRecord { utterance_id: utterance_id.to_string() }
        } else {
            Error::Io(e)
        }
    }
}
