use thiserror::Error;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: ibner::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core {
                source: ibner::Error::NonFinite { .. },
                ..
            } => EXIT_NUMERIC,
            CliError::Core {
                source: ibner::Error::Config(_),
                ..
            } => EXIT_USAGE,
            CliError::Core { .. } | CliError::Io { .. } => EXIT_DATA,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a short description of what was being attempted.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for ibner::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what(),
            source,
        })
    }
}

impl<T> Context<T> for std::io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Io {
            context: what(),
            source,
        })
    }
}
