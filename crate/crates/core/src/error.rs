use std::path::PathBuf;

/// Errors raised by the editing machinery.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("injection error: {0}")]
    Injection(String),

    #[error("propagation error: {0}")]
    Propagation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Pipeline {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with step/layer context, keeping its class.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Pipeline {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Manifest(_) => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Io,
            Error::Pipeline { source, .. } => source.class(),
            Error::Dimension(_)
            | Error::Shape(_)
            | Error::DegenerateVector(_)
            | Error::Injection(_)
            | Error::Propagation(_)
            | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
