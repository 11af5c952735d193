use std::fmt;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandId};
use crate::history::{Ballot, PredSet, Status};
use crate::timestamp::Timestamp;

/// What a node knows about a command, as reported to a recoverer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntrySnapshot {
    pub ts: Timestamp,
    pub pred: PredSet,
    pub status: Status,
    pub ballot: Ballot,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    FastPropose {
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        /// `None` is "no whitelist"; `Some(empty)` is a whitelist that
        /// forces nothing.
        whitelist: Option<PredSet>,
    },
    FastProposeR {
        id: CommandId,
        ballot: Ballot,
        ok: bool,
        ts: Timestamp,
        pred: PredSet,
    },
    SlowPropose {
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        pred: PredSet,
    },
    SlowProposeR {
        id: CommandId,
        ballot: Ballot,
        ok: bool,
        ts: Timestamp,
        pred: PredSet,
    },
    Retry {
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        pred: PredSet,
    },
    RetryR {
        id: CommandId,
        ballot: Ballot,
        ts: Timestamp,
        pred: PredSet,
        extra_pred: PredSet,
    },
    Stable {
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        pred: PredSet,
    },
    Recovery {
        id: CommandId,
        ballot: Ballot,
    },
    RecoveryR {
        id: CommandId,
        ballot: Ballot,
        /// `None` encodes NOP: the responder has no entry for the command.
        payload: Option<EntrySnapshot>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    FastPropose,
    FastProposeR,
    SlowPropose,
    SlowProposeR,
    Retry,
    RetryR,
    Stable,
    Recovery,
    RecoveryR,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::FastPropose,
        MessageKind::FastProposeR,
        MessageKind::SlowPropose,
        MessageKind::SlowProposeR,
        MessageKind::Retry,
        MessageKind::RetryR,
        MessageKind::Stable,
        MessageKind::Recovery,
        MessageKind::RecoveryR,
    ];
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::FastPropose { .. } => MessageKind::FastPropose,
            Message::FastProposeR { .. } => MessageKind::FastProposeR,
            Message::SlowPropose { .. } => MessageKind::SlowPropose,
            Message::SlowProposeR { .. } => MessageKind::SlowProposeR,
            Message::Retry { .. } => MessageKind::Retry,
            Message::RetryR { .. } => MessageKind::RetryR,
            Message::Stable { .. } => MessageKind::Stable,
            Message::Recovery { .. } => MessageKind::Recovery,
            Message::RecoveryR { .. } => MessageKind::RecoveryR,
        }
    }

    pub fn command_id(&self) -> CommandId {
        match self {
            Message::FastPropose { cmd, .. }
            | Message::SlowPropose { cmd, .. }
            | Message::Retry { cmd, .. }
            | Message::Stable { cmd, .. } => cmd.id,
            Message::FastProposeR { id, .. }
            | Message::SlowProposeR { id, .. }
            | Message::RetryR { id, .. }
            | Message::Recovery { id, .. }
            | Message::RecoveryR { id, .. } => *id,
        }
    }

    pub fn ballot(&self) -> Ballot {
        match self {
            Message::FastPropose { ballot, .. }
            | Message::FastProposeR { ballot, .. }
            | Message::SlowPropose { ballot, .. }
            | Message::SlowProposeR { ballot, .. }
            | Message::Retry { ballot, .. }
            | Message::RetryR { ballot, .. }
            | Message::Stable { ballot, .. }
            | Message::Recovery { ballot, .. }
            | Message::RecoveryR { ballot, .. } => *ballot,
        }
    }

    /// The timestamp carried by the message, if any.
    pub fn timestamp(&self) -> Option<Timestamp> {
        match self {
            Message::FastPropose { ts, .. }
            | Message::FastProposeR { ts, .. }
            | Message::SlowPropose { ts, .. }
            | Message::SlowProposeR { ts, .. }
            | Message::Retry { ts, .. }
            | Message::RetryR { ts, .. }
            | Message::Stable { ts, .. } => Some(*ts),
            Message::Recovery { .. } => None,
            Message::RecoveryR { payload, .. } => payload.as_ref().map(|p| p.ts),
        }
    }
}
