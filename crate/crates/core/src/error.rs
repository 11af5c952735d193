use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("at least 3 nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("latency matrix must be {n}x{n}")]
    LatencyShape { n: usize },
    #[error("node {node} out of range for n = {n}")]
    NodeOutOfRange { node: u32, n: usize },
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("trace error: {0}")]
    Trace(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
