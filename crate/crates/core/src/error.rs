use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants map onto four families (configuration, data, domain,
/// numerical) so that front ends can translate them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported for model {model}: {what}")]
    Unsupported { model: &'static str, what: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("particle filter degenerate at t = {t}: all weights are zero")]
    Degenerate { t: usize },

    #[error("data error{}: {msg}", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    Data { index: Option<usize>, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing reference gradient: {0}")]
    MissingReference(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(index: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            index,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingReference(_) | Error::Unsupported { .. } => 2,
            Error::Data { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 3,
            Error::Domain(_) | Error::Contract(_) | Error::Numeric(_) | Error::Degenerate { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
