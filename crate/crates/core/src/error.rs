use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {line}:{col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("duplicate kernel `{0}`")]
    DuplicateKernel(String),

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error("host model: {0}")]
    Host(String),

    #[error("dependence analysis: {0}")]
    Dependence(String),

    #[error("id queue of {requested} entries exceeds cap {cap}; fall back to identity order")]
    QueueTooLarge { requested: usize, cap: usize },

    #[error("channel order mismatch on `{buffer}`: {detail}")]
    OrderMismatch { buffer: String, detail: String },

    #[error("transform precondition failed: {0}")]
    Precondition(String),

    #[error("missing profile for kernel(s): {0}")]
    MissingProfile(String),

    #[error("balance: {0}")]
    Balance(String),

    #[error("missing measurement(s): {0}")]
    MissingMeasurement(String),

    #[error("deadlock: {0}")]
    Deadlock(String),

    #[error("simulation: {0}")]
    Sim(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
