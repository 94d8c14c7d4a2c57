use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Everything a command can fail with. Each variant maps to one process exit
/// code via [`CliError::exit_code`].
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: invalid checkpoint: {detail}")]
    Format { path: PathBuf, detail: FormatError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Why a checkpoint could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, expected \"SPA1\"")]
    BadMagic(Vec<u8>),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("file ends inside the header")]
    TruncatedHeader,
    #[error("record {index} is truncated")]
    TruncatedRecord { index: usize },
    #[error("record {index} has a name that is not UTF-8")]
    BadName { index: usize },
    #[error("record {index} ({name}) has rank {rank}; ranks 1 to 4 are allowed")]
    BadRank { index: usize, name: String, rank: u8 },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("record {name} is listed twice")]
    DuplicateRecord { name: String },
    #[error("missing record {name}")]
    MissingRecord { name: String },
    #[error("unexpected record {name}")]
    UnexpectedRecord { name: String },
    #[error("record {name} has dims {found:?}, the network expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub const EXIT_CONFIG: i32 = 1;
    pub const EXIT_DATA: i32 = 2;
    pub const EXIT_NUMERIC: i32 = 3;

    /// 1 for configuration problems, 2 for anything wrong with input or
    /// output files, 3 for numeric blow-ups during training.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => Self::EXIT_CONFIG,
            CliError::Data(_) | CliError::Format { .. } | CliError::Io { .. } => Self::EXIT_DATA,
            CliError::Numeric(_) => Self::EXIT_NUMERIC,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, detail: FormatError) -> Self {
        CliError::Format { path: path.as_ref().to_path_buf(), detail }
    }
}

impl From<spanet_core::Error> for CliError {
    fn from(e: spanet_core::Error) -> Self {
        use spanet_core::Error as E;
        match e {
            E::Config(msg) => CliError::Config(msg),
            E::Data(msg) => CliError::Data(msg),
            E::NonFinite { .. } => CliError::Numeric(e.to_string()),
            // a shape mismatch here means the images do not fit the network
            E::Dimension { .. } => CliError::Data(e.to_string()),
            E::Contract(_) => CliError::Config(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Data("x".into()).exit_code(), 2);
        assert_eq!(CliError::format("m.spa1", FormatError::TruncatedHeader).exit_code(), 2);
        let nf: CliError = spanet_core::Error::NonFinite { epoch: 1, batch: 3, value: f64::NAN }.into();
        assert_eq!(nf.exit_code(), 3);
        assert!(nf.to_string().contains("batch index 3"));
    }
}
