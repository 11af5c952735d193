//! Predecessor computation, the wait condition, loop breaking among stable
//! commands, and the delivery predicate.

use std::collections::BTreeSet;

use crate::command::{Command, CommandId};
use crate::history::{History, PredSet, Status};
use crate::rsm::ConflictFn;
use crate::timestamp::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaitVerdict {
    Ok,
    Nack,
}

/// Outcome of evaluating the wait condition at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum WaitOutcome {
    Ready(WaitVerdict),
    /// Conflicting commands with a higher timestamp that do not list the
    /// command as predecessor and are not yet accepted or stable.
    Deferred(BTreeSet<CommandId>),
}

/// Conflicting commands that must precede `cmd` at `ts`.
///
/// Without a whitelist every conflicting command with a smaller timestamp
/// is included. With one, whitelisted commands are always included, and
/// other commands only if they are past the fast-pending stage.
pub fn compute_predecessors(
    history: &History,
    conflict: ConflictFn,
    cmd: &Command,
    ts: Timestamp,
    whitelist: Option<&PredSet>,
) -> PredSet {
    let mut pred: PredSet = match whitelist {
        Some(wl) => wl.iter().copied().filter(|id| *id != cmd.id).collect(),
        None => PredSet::new(),
    };
    for e in history.iter() {
        if e.command.id == cmd.id || !conflict(&e.command.op, &cmd.op) || e.ts >= ts {
            continue;
        }
        let include = match whitelist {
            None => true,
            Some(_) => matches!(e.status, Status::SlowPending | Status::Accepted | Status::Stable),
        };
        if include {
            pred.insert(e.command.id);
        }
    }
    pred
}

/// Evaluates the wait condition for `cmd` proposed at `ts`.
pub fn wait_condition(history: &History, conflict: ConflictFn, cmd: &Command, ts: Timestamp) -> WaitOutcome {
    let mut blockers = BTreeSet::new();
    let mut reject = false;
    for e in history.iter() {
        if e.command.id == cmd.id
            || !conflict(&e.command.op, &cmd.op)
            || e.ts <= ts
            || e.pred.contains(&cmd.id)
        {
            continue;
        }
        if e.status.is_settled() {
            reject = true;
        } else {
            blockers.insert(e.command.id);
        }
    }
    if !blockers.is_empty() {
        WaitOutcome::Deferred(blockers)
    } else if reject {
        WaitOutcome::Ready(WaitVerdict::Nack)
    } else {
        WaitOutcome::Ready(WaitVerdict::Ok)
    }
}

/// Prunes predecessor edges between stable commands so that only edges
/// from lower to higher timestamps remain around `id`. Returns the ids of
/// entries whose predecessor set changed.
pub fn break_loop(history: &mut History, id: &CommandId) -> Vec<CommandId> {
    let Some(entry) = history.get(id) else {
        return Vec::new();
    };
    if entry.status != Status::Stable {
        return Vec::new();
    }
    let ts = entry.ts;
    let pred: Vec<CommandId> = entry.pred.iter().copied().collect();
    let mut changed = Vec::new();
    let mut drop_from_own = Vec::new();

    for other in pred {
        let Some(o) = history.get_mut(&other) else {
            continue;
        };
        if o.status != Status::Stable {
            continue;
        }
        if o.ts < ts {
            if o.pred.remove(id) {
                changed.push(other);
            }
        } else if o.ts > ts {
            drop_from_own.push(other);
        }
    }
    if !drop_from_own.is_empty() {
        let e = history.get_mut(id).expect("entry checked above");
        for other in drop_from_own {
            e.pred.remove(&other);
        }
        changed.push(*id);
    }
    changed
}

/// True iff every predecessor of `id` has been decided.
pub fn deliverable(history: &History, decided: &BTreeSet<CommandId>, id: &CommandId) -> bool {
    history
        .get(id)
        .map(|e| e.pred.iter().all(|p| decided.contains(p)))
        .unwrap_or(false)
}
