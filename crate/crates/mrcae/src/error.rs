use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a valid {what} file: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("unsupported {what} format version {found} (this build reads version {supported})")]
    Version { what: &'static str, found: u16, supported: u16 },
    #[error("{what} file is truncated: {needed} bytes expected, {actual} present")]
    Truncated { what: &'static str, needed: u64, actual: u64 },
    #[error("{what} checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { what: &'static str, stored: u32, computed: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mrcae_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for usage or configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Core(mrcae_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
