//! Scenario files: topology, faults, timeouts and workload for one run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::command::NodeId;
use crate::error::{ConfigError, Error};
use crate::experiment::workload::WorkloadConfig;
use crate::protocol::Mutations;
use crate::quorum::QuorumConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub node: u32,
    pub at: u64,
}

/// A command injected at a fixed tick, outside any workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedProposal {
    pub node: u32,
    pub at: u64,
    pub key: String,
    #[serde(default)]
    pub value: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictRelation {
    /// Same key, unless both are reads.
    #[default]
    SameKey,
    /// Every pair of commands conflicts.
    All,
}

impl ConflictRelation {
    pub fn function(self) -> crate::rsm::ConflictFn {
        match self {
            ConflictRelation::SameKey => crate::rsm::conflicts,
            ConflictRelation::All => crate::rsm::always_conflicts,
        }
    }
}

fn default_tick_limit() -> u64 {
    1_000_000
}

fn default_fast_timeout_multiplier() -> f64 {
    2.0
}

fn default_suspicion_multiplier() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// One-way delays in ticks, `latency[from][to]`. Diagonal entries are
    /// ignored in favour of `self_delay`.
    pub latency: Vec<Vec<u64>>,
    /// Uniform extra delay in `[0, jitter]` per message.
    #[serde(default)]
    pub jitter: u64,
    #[serde(default)]
    pub self_delay: u64,
    #[serde(default = "default_tick_limit")]
    pub tick_limit: u64,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
    /// Fast proposal timeout, as a multiple of the largest round trip.
    #[serde(default = "default_fast_timeout_multiplier")]
    pub fast_timeout_multiplier: f64,
    /// Leader suspicion timeout, as a multiple of the largest round trip.
    #[serde(default = "default_suspicion_multiplier")]
    pub suspicion_multiplier: f64,
    #[serde(default)]
    pub conflict: ConflictRelation,
    #[serde(default)]
    pub mutations: Mutations,
    #[serde(default)]
    pub workload: Option<WorkloadConfig>,
    #[serde(default)]
    pub proposals: Vec<ScriptedProposal>,
}

impl Scenario {
    /// All links share the same one-way delay.
    pub fn uniform(n: usize, delay: u64) -> Self {
        Self {
            name: format!("uniform{n}"),
            n,
            seed: 0,
            latency: vec![vec![delay; n]; n],
            jitter: 0,
            self_delay: 0,
            tick_limit: default_tick_limit(),
            crashes: Vec::new(),
            fast_timeout_multiplier: default_fast_timeout_multiplier(),
            suspicion_multiplier: default_suspicion_multiplier(),
            conflict: ConflictRelation::default(),
            mutations: Mutations::default(),
            workload: None,
            proposals: Vec::new(),
        }
    }

    /// Five sites: Virginia, Ohio, Frankfurt, Ireland, Mumbai, one tick per
    /// millisecond. Mumbai's links are half the measured round trips; the
    /// US/EU links are plausible values under 100 ms round trip.
    pub fn geo5() -> Self {
        const RTT: [[u64; 5]; 5] = [
            [0, 12, 90, 76, 186],
            [12, 0, 98, 86, 300],
            [90, 98, 0, 24, 112],
            [76, 86, 24, 0, 122],
            [186, 300, 112, 122, 0],
        ];
        let latency = RTT.iter().map(|row| row.iter().map(|r| r / 2).collect()).collect();
        Self {
            name: "geo5".into(),
            latency,
            ..Self::uniform(5, 0)
        }
    }

    pub const GEO5_SITES: [&'static str; 5] = ["VA", "OH", "DE", "IR", "IN"];

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let sc: Scenario = toml::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        QuorumConfig::new(self.n)?;
        if self.latency.len() != self.n || self.latency.iter().any(|r| r.len() != self.n) {
            return Err(ConfigError::LatencyShape { n: self.n });
        }
        let check = |node: u32| {
            if node as usize >= self.n {
                Err(ConfigError::NodeOutOfRange { node, n: self.n })
            } else {
                Ok(())
            }
        };
        for c in &self.crashes {
            check(c.node)?;
        }
        for p in &self.proposals {
            check(p.node)?;
        }
        if let Some(w) = &self.workload {
            w.validate()?;
        }
        Ok(())
    }

    pub fn quorum(&self) -> QuorumConfig {
        QuorumConfig::new(self.n).expect("validated scenario")
    }

    /// Delay without jitter; self-delivery uses `self_delay`.
    pub fn base_delay(&self, from: NodeId, to: NodeId) -> u64 {
        if from == to {
            self.self_delay
        } else {
            self.latency[from.index()][to.index()]
        }
    }

    pub fn max_one_way(&self) -> u64 {
        let mut m = 0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    m = m.max(self.latency[i][j]);
                }
            }
        }
        m.max(1)
    }

    /// Largest possible round trip including jitter.
    pub fn max_round_trip(&self) -> u64 {
        2 * (self.max_one_way() + self.jitter)
    }

    pub fn fast_timeout(&self) -> u64 {
        ((self.max_round_trip() as f64) * self.fast_timeout_multiplier).ceil() as u64
    }

    pub fn suspicion_timeout(&self) -> u64 {
        ((self.max_round_trip() as f64) * self.suspicion_multiplier).ceil() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geo5_encodes_mumbai_round_trips() {
        let g = Scenario::geo5();
        assert!(g.validate().is_ok());
        let inn = NodeId(4);
        let rtt: Vec<u64> = (0..4).map(|j| g.base_delay(inn, NodeId(j)) + g.base_delay(NodeId(j), inn)).collect();
        assert_eq!(rtt, vec![186, 300, 112, 122]);
        assert_eq!(g.base_delay(inn, NodeId(0)), 93);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(g.latency[i][j] * 2 < 100);
                    assert_eq!(g.latency[i][j], g.latency[j][i]);
                }
            }
        }
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let text = r#"
            n = 3
            seed = 11
            latency = [[0, 5, 5], [5, 0, 5], [5, 5, 0]]
            crashes = [{ node = 2, at = 40 }]

            [workload]
            commands_total = 10
            conflict_percent = 30
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(s.jitter, 0);
        assert_eq!(s.fast_timeout(), 20);
        assert_eq!(s.suspicion_timeout(), 40);
        assert_eq!(s.workload.as_ref().unwrap().shared_pool_size, 1);
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_malformed() {
        let bad_shape = "n = 3\nlatency = [[0, 1], [1, 0]]";
        assert!(matches!(
            Scenario::from_toml_str(bad_shape),
            Err(ConfigError::LatencyShape { n: 3 })
        ));
        let bad_crash = "n = 3\nlatency = [[0,1,1],[1,0,1],[1,1,0]]\ncrashes = [{ node = 3, at = 1 }]";
        assert!(matches!(
            Scenario::from_toml_str(bad_crash),
            Err(ConfigError::NodeOutOfRange { node: 3, n: 3 })
        ));
        assert!(Scenario::from_toml_str("n = 3\nlatency = 4").is_err());
    }
}
