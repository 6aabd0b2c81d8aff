use std::path::PathBuf;

/// Every failure mode surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs outside an operation's domain (bad site index, mismatched
    /// dimensions, negative coupling, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A result that should be real or nonnegative carried a residue larger
    /// than the consistency threshold.
    #[error("numerical consistency error: {0}")]
    Consistency(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("degenerate spectrum: E_max equals E_min")]
    DegenerateSpectrum,

    #[error("unreachable temperature: {0}")]
    UnreachableTemperature(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Consistency(_)
                | Error::Eigensolver(_)
                | Error::DegenerateSpectrum
                | Error::UnreachableTemperature(_)
                | Error::Range(_)
                | Error::Integration(_)
        )
    }

    /// Process exit code used by the CLI: 2 for bad input, 3 for numerical
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Serde(_) => 2,
            e if e.is_numerical() => 3,
            _ => 1,
        }
    }
}
