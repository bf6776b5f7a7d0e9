use std::path::PathBuf;

/// Errors surfaced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient distinct patches: need {needed}, found {found}")]
    InsufficientDistinctPatches { needed: usize, found: usize },
    #[error("patch misalignment: {0}")]
    PatchMisalignment(String),
    #[error("unresolved mask token at index {index}")]
    UnresolvedMaskToken { index: usize },
    #[error("more steps than masked tokens: {steps} steps for {masked} masked tokens")]
    MoreStepsThanMasked { steps: usize, masked: usize },
    #[error("divergence: non-finite loss {0}")]
    Divergence(f64),
    #[error("bad checkpoint header")]
    BadCheckpointHeader,
    #[error("config hash mismatch: checkpoint has {found}, expected {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion { what: &'static str, found: u32, expected: u32 },
    #[error("bad {what} file: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("missing required input `{0}`")]
    MissingInput(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), reason: reason.into() }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidConfig { .. }
                | Error::MissingInput(_)
                | Error::PatchMisalignment(_)
                | Error::MoreStepsThanMasked { .. }
                | Error::ShapeMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
