use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad flags, bad config values, too-small inputs.
    pub const USAGE: i32 = 2;
    /// Missing files, unreadable or unwritable paths.
    pub const IO: i32 = 3;
    /// Malformed files, checksum or version failures.
    pub const FORMAT: i32 = 4;
    /// Inputs that do not fit together: kind, shape, run or frame mismatches.
    pub const MISMATCH: i32 = 5;
    /// NaN/Inf during training or an undefined statistic.
    pub const NUMERICAL: i32 = 6;
}

#[derive(Debug)]
pub enum CliError {
    Core(spadseg::Error),
    Usage(String),
    Mismatch(String),
    Io { path: PathBuf, source: io::Error },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use spadseg::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Mismatch(_) => exit::MISMATCH,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::OutOfWindow { .. } | E::SampleTooSmall(_) | E::Empty(_) => exit::USAGE,
                E::Io(_) => exit::IO,
                E::Format(_) | E::Checksum { .. } | E::Version { .. } => exit::FORMAT,
                E::ShapeMismatch { .. } | E::KindMismatch(_) | E::MissingSource(_) => exit::MISMATCH,
                E::NonFinite(_) | E::UndefinedSbr => exit::NUMERICAL,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Mismatch(m) => write!(f, "mismatch: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<spadseg::Error> for CliError {
    fn from(e: spadseg::Error) -> Self {
        CliError::Core(e)
    }
}

/// Attaches a path to I/O failures.
pub trait IoContext<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Like [`IoContext`] for library calls: I/O errors get the path, others
/// pass through.
pub fn with_path<T>(r: spadseg::Result<T>, path: &Path) -> CliResult<T> {
    r.map_err(|e| match e {
        spadseg::Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Core(other),
    })
}
