use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("missing field {field} at line {line}")]
    MissingField { field: &'static str, line: usize },

    #[error("invalid record at line {line}: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cannot pool zero vectors")]
    EmptyPool,

    #[error("embedding cache has no entry for {} key(s): {}", .0.len(), .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("bad embedding cache: {0}")]
    BadCache(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("remote service returned status {status}: {body}")]
    Http { status: u16, body: String },

    #[error("empty rewrite")]
    EmptyRewrite,

    #[error("invalid rewrite request: {0}")]
    InvalidRequest(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("sentence {0} is already selected")]
    AlreadySelected(usize),

    #[error("no remaining candidates to select from")]
    NoCandidates,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("training aborted: {0}")]
    Aborted(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures worth retrying against a remote service.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}
