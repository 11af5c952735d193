use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rsm::KvCommand;

/// Index of a node in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Globally unique command identifier: the proposing node plus a local
/// sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommandId {
    pub proposer: NodeId,
    pub seq: u64,
}

impl CommandId {
    pub const fn new(proposer: NodeId, seq: u64) -> Self {
        Self { proposer, seq }
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.proposer.0, self.seq)
    }
}

/// A command as seen by the consensus layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub id: CommandId,
    pub op: KvCommand,
}

impl Command {
    pub fn new(id: CommandId, op: KvCommand) -> Self {
        Self { id, op }
    }
}
