use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or input file value failed validation. `field` is a
    /// dotted path into the document, e.g. `workload.zipf_exponent`.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("transfer session refused: {0}")]
    SessionRefused(&'static str),

    #[error("peer {0} is not registered with the tracker")]
    UnknownPeer(u32),

    #[error("cannot make room for video {video}: {reason}")]
    StoreFull { video: u32, reason: String },

    #[error("malformed wire message: {0}")]
    Wire(String),

    #[error("failed to parse {what}: {source}")]
    Toml {
        what: String,
        #[source]
        source: toml::de::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid { .. } | Error::Toml { .. })
    }
}
