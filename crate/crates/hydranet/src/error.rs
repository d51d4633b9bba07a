use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hydranet_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{}: not a {expected} file (bad magic bytes)", path.display())]
    Magic { path: PathBuf, expected: &'static str },
    #[error("{}: truncated: {detail}", path.display())]
    Truncated { path: PathBuf, detail: String },
    #[error("{}: corrupt: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("misaligned months: {0}")]
    Misaligned(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn corrupt(path: &Path, detail: impl Into<String>) -> Self {
        Error::Corrupt { path: path.to_path_buf(), detail: detail.into() }
    }

    /// Process exit code: 2 for invalid input or configuration, 3 for month misalignment, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use hydranet_core::Error as C;
        match self {
            Error::Parse { .. } | Error::Config(_) => 2,
            Error::Core(C::InvalidRecord { .. } | C::InvalidValue(_) | C::CountOverflow { .. } | C::Config(_)) => 2,
            Error::Misaligned(_) | Error::Core(C::MonthRange(_)) => 3,
            _ => 1,
        }
    }
}
