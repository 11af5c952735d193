//! Client workloads: which keys commands touch and when they arrive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::command::NodeId;
use crate::error::ConfigError;
use crate::rsm::KvCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mode {
    /// Each client proposes its next command once the previous one is
    /// decided at its node.
    ClosedLoop,
    /// Poisson arrivals across the whole system, assigned to a uniformly
    /// chosen live node.
    OpenLoop { mean_interarrival: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub clients_per_node: usize,
    pub commands_total: usize,
    /// Probability, in percent, that a command's key comes from the shared
    /// pool. All other commands get a key nobody else uses.
    pub conflict_percent: u8,
    /// Keys in the shared pool. With one key, every pair of shared-pool
    /// commands conflicts.
    pub shared_pool_size: usize,
    pub value_size: usize,
    pub mode: Mode,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            clients_per_node: 1,
            commands_total: 100,
            conflict_percent: 0,
            shared_pool_size: 1,
            value_size: 4,
            mode: Mode::ClosedLoop,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.conflict_percent > 100 {
            return Err(ConfigError::Workload(format!(
                "conflict_percent {} exceeds 100",
                self.conflict_percent
            )));
        }
        if self.shared_pool_size == 0 {
            return Err(ConfigError::Workload("shared_pool_size must be positive".into()));
        }
        if let Mode::OpenLoop { mean_interarrival } = self.mode {
            if !(mean_interarrival > 0.0 && mean_interarrival.is_finite()) {
                return Err(ConfigError::Workload(format!(
                    "mean_interarrival must be positive, got {mean_interarrival}"
                )));
            }
        }
        if matches!(self.mode, Mode::ClosedLoop) && self.clients_per_node == 0 && self.commands_total > 0 {
            return Err(ConfigError::Workload("closed loop needs at least one client per node".into()));
        }
        Ok(())
    }
}

/// Deterministic command source for one run.
#[derive(Debug, Clone)]
pub struct CommandGenerator {
    config: WorkloadConfig,
    rng: ChaCha8Rng,
    issued: usize,
}

impl CommandGenerator {
    pub fn new(config: WorkloadConfig, seed: u64) -> Self {
        Self {
            config,
            // Separate stream from the network so that keys do not depend on
            // delivery order.
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de_0000_0001),
            issued: 0,
        }
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.config
    }

    pub fn issued(&self) -> usize {
        self.issued
    }

    pub fn exhausted(&self) -> bool {
        self.issued >= self.config.commands_total
    }

    /// Next operation, or `None` once the total is reached.
    pub fn next_op(&mut self) -> Option<KvCommand> {
        if self.exhausted() {
            return None;
        }
        let n = self.issued;
        self.issued += 1;
        let shared = self.rng.gen_range(0..100u8) < self.config.conflict_percent;
        let key = if shared {
            format!("s{:05}", self.rng.gen_range(0..self.config.shared_pool_size))
        } else {
            format!("p{n:05}")
        };
        let mut value = (n as u32).to_be_bytes().to_vec();
        value.resize(self.config.value_size, 0);
        Some(KvCommand::put(key, value))
    }

    /// Ticks until the next open-loop arrival.
    pub fn next_interarrival(&mut self) -> u64 {
        match self.config.mode {
            Mode::OpenLoop { mean_interarrival } => {
                let exp = Exp::new(1.0 / mean_interarrival).expect("validated rate");
                exp.sample(&mut self.rng).round() as u64
            }
            Mode::ClosedLoop => 0,
        }
    }

    pub fn pick_node(&mut self, alive: &[NodeId]) -> Option<NodeId> {
        if alive.is_empty() {
            return None;
        }
        Some(alive[self.rng.gen_range(0..alive.len())])
    }
}
