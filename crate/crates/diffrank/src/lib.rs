//! File formats, experiment pipeline and command line for `diffrank-core`.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use diffrank_core::data::DataError;
use diffrank_core::model::ModelError;
use diffrank_core::objectives::ObjectiveError;
use diffrank_core::train::TrainError;

mod binfmt;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod letor;
pub mod pipeline;
pub mod report;
pub mod significance;

pub use diffrank_core as core;

/// Problems decoding one of the binary formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("unrecognized file header")]
    Magic,
    #[error("format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("file ends early")]
    Truncated,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 string")]
    Utf8,
    #[error("invalid field: {0}")]
    Field(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("missing file or directory {}", .0.display())]
    MissingFile(PathBuf),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{}: {inner}", path.display())]
    InFile { path: PathBuf, inner: Box<Error> },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("training diverged at step {step} (loss {loss}); last good checkpoint kept")]
    Diverged { step: u64, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Display, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }

    pub(crate) fn context(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. } | Error::MissingFile(_)) => e,
            e => Error::InFile {
                path: path.to_path_buf(),
                inner: Box::new(e),
            },
        }
    }
}

/// Writes a file, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display(), e))
}
