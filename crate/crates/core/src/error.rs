use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input: shapes, files, configuration.
    #[error("invalid input: {0}")]
    Input(String),

    /// A solver produced a non-finite value.
    #[error("numerical failure at iteration {iteration}: {detail}")]
    Numerical { iteration: usize, detail: String },

    /// Error raised while processing a particular image set.
    #[error("set '{set_id}': {source}")]
    InSet {
        set_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn in_set(self, set_id: &str) -> Self {
        Error::InSet {
            set_id: set_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True when the root cause is a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } => true,
            Error::InSet { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
