use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("projection: {0}")]
    Projection(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("forcing: {0}")]
    Forcing(String),

    #[error("surface: {0}")]
    Surface(String),

    /// Malformed or unsupported NetCDF-classic content.
    #[error("cdf: {0}")]
    Format(String),

    #[error("decomposition: {0}")]
    Decomp(String),

    /// Checksums, write coverage, restart consistency.
    #[error("integrity: {0}")]
    Integrity(String),

    #[error("config: {0}")]
    Config(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("perf: {0}")]
    Perf(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unreadable, corrupt or inconsistent data on disk.
    pub fn is_io_or_integrity(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::File { .. } | Error::Format(_) | Error::Integrity(_) | Error::Csv(_)
        )
    }
}
