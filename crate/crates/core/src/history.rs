//! Per-node command history and ballot bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandId};
use crate::timestamp::Timestamp;

/// Predecessor sets are kept sorted so that they encode deterministically.
pub type PredSet = BTreeSet<CommandId>;

pub type Ballot = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    FastPending,
    SlowPending,
    Accepted,
    Rejected,
    Stable,
}

impl Status {
    /// Accepted or stable entries are final for the wait condition.
    pub fn is_settled(self) -> bool {
        matches!(self, Status::Accepted | Status::Stable)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::FastPending => "fast-pending",
            Status::SlowPending => "slow-pending",
            Status::Accepted => "accepted",
            Status::Rejected => "rejected",
            Status::Stable => "stable",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The `⟨c, T, Pred, status, B, forced⟩` tuple a node keeps per command.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub command: Command,
    pub ts: Timestamp,
    pub pred: PredSet,
    pub status: Status,
    pub ballot: Ballot,
    pub forced: bool,
}

/// A node's history: at most one entry per command, updates replace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct History {
    entries: BTreeMap<CommandId, HistoryEntry>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &CommandId) -> Option<&HistoryEntry> {
        self.entries.get(id)
    }

    pub fn get_mut(&mut self, id: &CommandId) -> Option<&mut HistoryEntry> {
        self.entries.get_mut(id)
    }

    pub fn contains(&self, id: &CommandId) -> bool {
        self.entries.contains_key(id)
    }

    /// Replaces any existing tuple for the same command.
    pub fn update(&mut self, entry: HistoryEntry) -> Option<HistoryEntry> {
        self.entries.insert(entry.command.id, entry)
    }

    pub fn remove(&mut self, id: &CommandId) -> Option<HistoryEntry> {
        self.entries.remove(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-command ballot numbers, defaulting to zero. Never decreases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BallotMap {
    ballots: BTreeMap<CommandId, Ballot>,
}

impl BallotMap {
    pub fn get(&self, id: &CommandId) -> Ballot {
        self.ballots.get(id).copied().unwrap_or(0)
    }

    /// Raises the ballot for `id` to at least `ballot`.
    pub fn raise(&mut self, id: CommandId, ballot: Ballot) {
        let slot = self.ballots.entry(id).or_insert(0);
        if ballot > *slot {
            *slot = ballot;
        }
    }

    /// Increments and returns the new ballot.
    pub fn bump(&mut self, id: CommandId) -> Ballot {
        let slot = self.ballots.entry(id).or_insert(0);
        *slot += 1;
        *slot
    }

    pub fn remove(&mut self, id: &CommandId) {
        self.ballots.remove(id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::NodeId;
    use crate::rsm::KvCommand;

    fn entry(seq: u64, status: Status) -> HistoryEntry {
        let id = CommandId::new(NodeId(0), seq);
        HistoryEntry {
            command: Command::new(id, KvCommand::put("k", b"v".to_vec())),
            ts: Timestamp::new(seq, NodeId(0)),
            pred: PredSet::new(),
            status,
            ballot: 0,
            forced: false,
        }
    }

    #[test]
    fn update_replaces() {
        let mut h = History::new();
        h.update(entry(1, Status::FastPending));
        let old = h.update(entry(1, Status::Stable)).unwrap();
        assert_eq!(old.status, Status::FastPending);
        assert_eq!(h.len(), 1);
        assert_eq!(h.get(&CommandId::new(NodeId(0), 1)).unwrap().status, Status::Stable);
    }

    #[test]
    fn ballots_never_decrease() {
        let id = CommandId::new(NodeId(1), 0);
        let mut b = BallotMap::default();
        assert_eq!(b.get(&id), 0);
        b.raise(id, 3);
        b.raise(id, 1);
        assert_eq!(b.get(&id), 3);
        assert_eq!(b.bump(id), 4);
    }
}
