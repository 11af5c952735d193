//! Taking over a command whose leader crashed or is suspected: the
//! Recovery/RecoveryR exchange and the case analysis over collected tuples.

use std::collections::BTreeMap;

use log::debug;

use crate::command::{Command, CommandId, NodeId};
use crate::history::{Ballot, PredSet, Status};
use crate::protocol::{Action, EntrySnapshot, Leading, Message, Note, NodeState, Outbox, Phase, RecoveryCase, Transition};
use crate::timestamp::Timestamp;

/// One responder's view of the command, as reported in a RecoveryR.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecoveryTuple {
    pub source: NodeId,
    pub ts: Timestamp,
    pub pred: PredSet,
    pub status: Status,
    pub forced: bool,
}

/// Tuples from the replies that carry the highest entry ballot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoverySet {
    pub ballot: Ballot,
    pub tuples: Vec<RecoveryTuple>,
}

impl RecoverySet {
    /// Keeps only the tuples written at the maximum ballot; NOP replies are
    /// dropped.
    pub fn from_replies(replies: &BTreeMap<NodeId, Option<EntrySnapshot>>) -> Self {
        let max = replies.values().flatten().map(|s| s.ballot).max();
        let Some(ballot) = max else {
            return Self::default();
        };
        let tuples = replies
            .iter()
            .filter_map(|(src, s)| s.as_ref().map(|s| (*src, s)))
            .filter(|(_, s)| s.ballot == ballot)
            .map(|(source, s)| RecoveryTuple {
                source,
                ts: s.ts,
                pred: s.pred.clone(),
                status: s.status,
                forced: s.forced,
            })
            .collect();
        Self { ballot, tuples }
    }

    fn with_status(&self, status: Status) -> Option<&RecoveryTuple> {
        self.tuples.iter().find(|t| t.status == status)
    }
}

/// What the recoverer does next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecoveryPlan {
    Stable { ts: Timestamp, pred: PredSet },
    Retry { ts: Timestamp, pred: PredSet },
    /// Start over with a fresh timestamp and no whitelist.
    FreshProposal { case: RecoveryCase },
    SlowProposal { ts: Timestamp, pred: PredSet },
    FastProposal { ts: Timestamp, whitelist: Option<PredSet> },
}

impl RecoveryPlan {
    pub fn case(&self) -> RecoveryCase {
        match self {
            RecoveryPlan::Stable { .. } => RecoveryCase::Stable,
            RecoveryPlan::Retry { .. } => RecoveryCase::Accepted,
            RecoveryPlan::FreshProposal { case } => *case,
            RecoveryPlan::SlowProposal { .. } => RecoveryCase::SlowPending,
            RecoveryPlan::FastProposal { .. } => RecoveryCase::FastPending,
        }
    }
}

/// Rebuilds the whitelist for a command found fast-pending everywhere.
///
/// A previously forced tuple wins outright. Otherwise a command stays in the
/// whitelist unless at least `⌊cq/2⌋+1` non-forced tuples lack it, which
/// rules out that it was part of a fast decision. With too few tuples no
/// fast decision can have happened and the result is null.
pub fn compute_whitelist(set: &RecoverySet, cq: usize) -> Option<PredSet> {
    let union: PredSet = set.tuples.iter().flat_map(|t| t.pred.iter().copied()).collect();
    if set.tuples.iter().any(|t| t.forced) {
        return Some(union);
    }
    let majority = cq / 2 + 1;
    if set.tuples.len() < majority {
        return None;
    }
    let wl = union
        .into_iter()
        .filter(|c| {
            let lacking = set.tuples.iter().filter(|t| !t.forced && !t.pred.contains(c)).count();
            lacking < majority
        })
        .collect();
    Some(wl)
}

/// Case analysis over a recovery set, in strict priority order: stable,
/// accepted, rejected, slow-pending, fast-pending, empty.
///
/// Panics if fast-pending tuples disagree on the timestamp, which the
/// protocol rules out at a single ballot.
pub fn resolve(set: &RecoverySet, cq: usize, skip_whitelist: bool) -> RecoveryPlan {
    if let Some(t) = set.with_status(Status::Stable) {
        return RecoveryPlan::Stable {
            ts: t.ts,
            pred: t.pred.clone(),
        };
    }
    if let Some(t) = set.with_status(Status::Accepted) {
        return RecoveryPlan::Retry {
            ts: t.ts,
            pred: t.pred.clone(),
        };
    }
    if set.with_status(Status::Rejected).is_some() {
        return RecoveryPlan::FreshProposal {
            case: RecoveryCase::Rejected,
        };
    }
    if let Some(t) = set.with_status(Status::SlowPending) {
        return RecoveryPlan::SlowProposal {
            ts: t.ts,
            pred: t.pred.clone(),
        };
    }
    let Some(first) = set.tuples.first() else {
        return RecoveryPlan::FreshProposal {
            case: RecoveryCase::Empty,
        };
    };
    assert!(
        set.tuples.iter().all(|t| t.ts == first.ts),
        "fast-pending tuples at ballot {} disagree on the timestamp",
        set.ballot
    );
    let whitelist = if skip_whitelist { None } else { compute_whitelist(set, cq) };
    RecoveryPlan::FastProposal { ts: first.ts, whitelist }
}

impl NodeState {
    pub(crate) fn snapshot(&self, id: &CommandId) -> Option<EntrySnapshot> {
        let e = self.history.get(id)?;
        let pred = match self.stable_values.get(id) {
            Some(v) if e.status == Status::Stable => v.pred.clone(),
            _ => e.pred.clone(),
        };
        Some(EntrySnapshot {
            ts: e.ts,
            pred,
            status: e.status,
            ballot: e.ballot,
            forced: e.forced,
        })
    }

    /// Tries to take over `id` at a fresh ballot. Needs a local entry for
    /// the command, since the payload is re-proposed from it.
    pub fn start_recovery(&mut self, id: CommandId) -> Vec<Action> {
        let mut out = Outbox::default();
        let Some(entry) = self.history.get(&id) else {
            debug!("{}: cannot recover {} without a local entry", self.cfg.id, id);
            return out.actions;
        };
        let cmd = entry.command.clone();
        let own = self.snapshot(&id);
        let ballot = self.ballots.bump(id);
        self.raise_ballot(id, ballot);
        self.waits.remove(&id);
        self.leaders.insert(id, self.cfg.id);
        // Our own reply is counted directly: it would fail the strict ballot
        // gate once the ballot above has been taken.
        let mut replies = BTreeMap::new();
        replies.insert(self.cfg.id, own);
        self.leading.insert(
            id,
            Leading {
                cmd,
                ballot,
                phase: Phase::Recovering { replies },
            },
        );
        out.note(Note::RecoveryStarted { id, ballot });
        for i in 0..self.cfg.quorum.n {
            let to = NodeId(i as u32);
            if to != self.cfg.id {
                out.send(to, Message::Recovery { id, ballot });
            }
        }
        self.maybe_resolve(&mut out, id);
        out.actions
    }

    pub(crate) fn on_recovery(&mut self, out: &mut Outbox, from: NodeId, id: CommandId, ballot: Ballot) {
        if ballot <= self.ballots.get(&id) {
            return;
        }
        self.raise_ballot(id, ballot);
        self.leaders.insert(id, from);
        out.send(
            from,
            Message::RecoveryR {
                id,
                ballot,
                payload: self.snapshot(&id),
            },
        );
    }

    pub(crate) fn on_recovery_reply(
        &mut self,
        out: &mut Outbox,
        from: NodeId,
        id: CommandId,
        ballot: Ballot,
        payload: Option<EntrySnapshot>,
    ) {
        let Some(l) = self.leading.get_mut(&id) else {
            return;
        };
        if l.ballot != ballot {
            return;
        }
        let Phase::Recovering { replies } = &mut l.phase else {
            return;
        };
        replies.entry(from).or_insert(payload);
        self.maybe_resolve(out, id);
    }

    fn maybe_resolve(&mut self, out: &mut Outbox, id: CommandId) {
        let cq = self.cfg.quorum.cq;
        let l = &self.leading[&id];
        let Phase::Recovering { replies } = &l.phase else {
            return;
        };
        if replies.len() < cq {
            return;
        }
        let set = RecoverySet::from_replies(replies);
        let counted: Vec<NodeId> = replies.keys().copied().collect();
        let (cmd, ballot): (Command, Ballot) = (l.cmd.clone(), l.ballot);
        let plan = resolve(&set, cq, self.cfg.mutations.skip_whitelist);
        out.note(Note::RecoveryResolved {
            id,
            ballot,
            case: plan.case(),
        });
        match plan {
            RecoveryPlan::Stable { ts, pred } => {
                out.note(Note::Transition {
                    id,
                    ballot,
                    kind: Transition::RecoveredStable,
                    counted,
                });
                self.start_stable(out, cmd, ballot, ts, pred);
            }
            RecoveryPlan::Retry { ts, pred } => self.start_retry(out, cmd, ballot, ts, pred),
            RecoveryPlan::FreshProposal { .. } => {
                let ts = self.clock.issue();
                self.start_fast_proposal(out, cmd, ballot, ts, None);
            }
            RecoveryPlan::SlowProposal { ts, pred } => self.start_slow_proposal(out, cmd, ballot, ts, pred),
            RecoveryPlan::FastProposal { ts, whitelist } => self.start_fast_proposal(out, cmd, ballot, ts, whitelist),
        }
    }
}
