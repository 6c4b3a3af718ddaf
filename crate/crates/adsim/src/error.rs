use std::path::{Path, PathBuf};

use adsim_core::attacks::AttackError;

/// Everything the runner and CLI can fail with. Each variant maps to a
/// process exit code through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The scenario or another input file is malformed or inconsistent.
    #[error("{file}: {message}")]
    Config { file: String, message: String },
    #[error("unknown policy `{name}` (known presets: {known})")]
    UnknownPolicy { name: String, known: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A run could not complete. Attack failures are reported data, not this.
    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: AttackError,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::UnknownPolicy { .. } => 2,
            Error::Io { .. } => 3,
            Error::Run { .. } => 1,
        }
    }

    pub(crate) fn config(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            file: file.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
