use std::io;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] basinwalk::Error),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint: truncated or oversized file ({0})")]
    Truncated(String),
    #[error("checkpoint: {0}")]
    Mismatch(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
