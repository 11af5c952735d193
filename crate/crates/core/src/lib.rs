//! Leader-per-command generalized consensus over timestamps and predecessor
//! sets, with a deterministic network simulator and consistency checkers.
//!
//! The protocol engine ([`protocol::NodeState`]) is a pure state machine:
//! it takes messages and timer firings and returns actions. Hosts decide
//! how those actions reach the network, which lets the same engine run in
//! the discrete-event simulator ([`netsim`]), the exhaustive explorer
//! ([`verify::explore`]) and over TCP ([`live`]).

pub mod command;
pub mod error;
pub mod experiment;
pub mod live;
pub mod history;
pub mod netsim;
pub mod protocol;
pub mod quorum;
pub mod recovery;
pub mod rsm;
pub mod timestamp;
pub mod verify;
pub mod wire;

pub use command::{Command, CommandId, NodeId};
pub use error::{ConfigError, Error, Result};
pub use history::{Ballot, History, HistoryEntry, PredSet, Status};
pub use protocol::{Action, Decision, Message, Mutations, NodeConfig, NodeState, Timer};
pub use quorum::QuorumConfig;
pub use rsm::{KvCommand, Store};
pub use timestamp::{LogicalClock, Timestamp};
