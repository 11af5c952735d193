use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Quorum sizes for an `n`-node deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub n: usize,
    /// Classic quorum, `⌊n/2⌋ + 1`.
    pub cq: usize,
    /// Fast quorum, `⌈3n/4⌉`.
    pub fq: usize,
    /// Crashes tolerated while keeping a classic quorum alive.
    pub f: usize,
}

impl QuorumConfig {
    pub fn new(n: usize) -> Result<Self, ConfigError> {
        if n < 3 {
            return Err(ConfigError::TooFewNodes(n));
        }
        let cq = n / 2 + 1;
        let fq = (3 * n).div_ceil(4);
        Ok(Self { n, cq, fq, f: n - cq })
    }

    /// Smallest possible overlap between a classic and a fast quorum that
    /// the whitelist rule relies on: `⌊cq/2⌋ + 1`.
    pub fn recovery_majority(&self) -> usize {
        self.cq / 2 + 1
    }
}

pub fn quorum_sizes(n: usize) -> Result<QuorumConfig, ConfigError> {
    QuorumConfig::new(n)
}
