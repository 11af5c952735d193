//! Replicated key-value state machine and the command conflict relation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpType {
    Put,
    Get,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KvCommand {
    pub key: String,
    pub op: OpType,
    pub value: Vec<u8>,
}

impl KvCommand {
    pub fn put(key: impl Into<String>, value: Vec<u8>) -> Self {
        Self {
            key: key.into(),
            op: OpType::Put,
            value,
        }
    }

    pub fn get(key: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            op: OpType::Get,
            value: Vec::new(),
        }
    }

    /// Size of the benchmark encoding: key, value, a 4-byte request id and
    /// a 1-byte operation type.
    pub fn encoded_len(&self) -> usize {
        self.key.len() + self.value.len() + 4 + 1
    }
}

/// Pure conflict predicate over command payloads. Swappable so checkers
/// can run protocols under other relations.
pub type ConflictFn = fn(&KvCommand, &KvCommand) -> bool;

/// Same key, unless both are reads.
pub fn conflicts(a: &KvCommand, b: &KvCommand) -> bool {
    a.key == b.key && !(a.op == OpType::Get && b.op == OpType::Get)
}

/// Every pair conflicts; forces a total order.
pub fn always_conflicts(_: &KvCommand, _: &KvCommand) -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Store {
    data: BTreeMap<String, Vec<u8>>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies a decided command. Gets on absent keys return an empty value.
    pub fn apply(&mut self, cmd: &KvCommand) -> Vec<u8> {
        match cmd.op {
            OpType::Put => {
                self.data.insert(cmd.key.clone(), cmd.value.clone());
                cmd.value.clone()
            }
            OpType::Get => self.data.get(&cmd.key).cloned().unwrap_or_default(),
        }
    }

    pub fn read(&self, key: &str) -> Option<&[u8]> {
        self.data.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
