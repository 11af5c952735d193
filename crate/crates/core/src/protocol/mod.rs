//! The per-node state machine: proposal, retry and stable phases on the
//! leader side, and the matching acceptor handlers.
//!
//! A [`NodeState`] consumes one input at a time and returns the resulting
//! [`Action`]s as values. It never blocks: a reply held back by the wait
//! condition is parked and re-evaluated whenever one of the entries it waits
//! on changes.

mod auxiliary;
mod message;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

pub use auxiliary::{break_loop, compute_predecessors, deliverable, wait_condition, WaitOutcome, WaitVerdict};
pub use message::{EntrySnapshot, Message, MessageKind};

use crate::command::{Command, CommandId, NodeId};
use crate::history::{Ballot, BallotMap, History, HistoryEntry, PredSet, Status};
use crate::quorum::QuorumConfig;
use crate::rsm::{conflicts, ConflictFn};
use crate::timestamp::{LogicalClock, Timestamp};

/// Deliberate protocol breakages, used to show that the checkers are not
/// vacuous. All off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mutations {
    /// Acceptors reply OK without evaluating the wait condition.
    pub skip_wait: bool,
    /// Leaders take the fast decision with a classic quorum of replies.
    pub fast_on_classic_quorum: bool,
    /// Recovery re-proposes fast-pending commands without a whitelist.
    pub skip_whitelist: bool,
}

impl Mutations {
    pub fn any(&self) -> bool {
        self.skip_wait || self.fast_on_classic_quorum || self.skip_whitelist
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NodeConfig {
    pub id: NodeId,
    pub quorum: QuorumConfig,
    pub conflict: ConflictFn,
    pub mutations: Mutations,
}

// The conflict relation is left out of equality and hashing: function
// pointers have no stable identity, and all nodes of a run share one.
impl PartialEq for NodeConfig {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.quorum == other.quorum && self.mutations == other.mutations
    }
}

impl Eq for NodeConfig {}

impl std::hash::Hash for NodeConfig {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.id.hash(state);
        self.quorum.hash(state);
        self.mutations.hash(state);
    }
}

impl NodeConfig {
    pub fn new(id: NodeId, quorum: QuorumConfig) -> Self {
        Self {
            id,
            quorum,
            conflict: conflicts,
            mutations: Mutations::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Timer {
    FastProposalTimeout { id: CommandId, ballot: Ballot },
}

/// Which leader-side step produced a phase change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Transition {
    /// Fast quorum of non-rejecting replies: straight to the stable phase.
    FastDecision,
    /// A rejection in the fast proposal phase.
    FastToRetry,
    /// Only a classic quorum answered before the timeout, none rejecting.
    FastToSlowProposal,
    SlowDecisionFromProposal,
    SlowToRetry,
    SlowDecisionFromRetry,
    /// A recoverer found a stable tuple and re-broadcast it.
    RecoveredStable,
}

impl Transition {
    pub fn issues_stable(self) -> bool {
        matches!(
            self,
            Transition::FastDecision
                | Transition::SlowDecisionFromProposal
                | Transition::SlowDecisionFromRetry
                | Transition::RecoveredStable
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProposalKind {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecoveryCase {
    Stable,
    Accepted,
    Rejected,
    SlowPending,
    FastPending,
    Empty,
}

/// Observable protocol events, recorded in traces and used for metrics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "note")]
pub enum Note {
    Transition {
        id: CommandId,
        ballot: Ballot,
        kind: Transition,
        counted: Vec<NodeId>,
    },
    WaitStarted {
        id: CommandId,
        ballot: Ballot,
        phase: ProposalKind,
        blockers: Vec<CommandId>,
    },
    WaitEnded {
        id: CommandId,
        ballot: Ballot,
        ok: bool,
    },
    Rejected {
        id: CommandId,
        ballot: Ballot,
        ts: Timestamp,
        suggested: Timestamp,
    },
    RecoveryStarted {
        id: CommandId,
        ballot: Ballot,
    },
    RecoveryResolved {
        id: CommandId,
        ballot: Ballot,
        case: RecoveryCase,
    },
    DuplicatePropose {
        id: CommandId,
    },
}

/// A command this node has just decided, with the values carried by the
/// stable phase that decided it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub command: Command,
    pub ts: Timestamp,
    pub pred: PredSet,
    pub ballot: Ballot,
    pub index: usize,
    /// Set when a later stable phase disagrees with what this node already
    /// decided. The command is not applied again.
    pub repeat: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Send { to: NodeId, msg: Message },
    SetTimer(Timer),
    Decide(Decision),
    Note(Note),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Reply {
    pub ok: bool,
    pub ts: Timestamp,
    pub pred: PredSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum Phase {
    Recovering {
        replies: BTreeMap<NodeId, Option<EntrySnapshot>>,
    },
    FastProposal {
        ts: Timestamp,
        replies: BTreeMap<NodeId, Reply>,
        timed_out: bool,
    },
    SlowProposal {
        ts: Timestamp,
        replies: BTreeMap<NodeId, Reply>,
    },
    Retry {
        ts: Timestamp,
        pred: PredSet,
        replies: BTreeMap<NodeId, PredSet>,
    },
}

/// Leader-side bookkeeping for one command at one ballot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Leading {
    pub cmd: Command,
    pub ballot: Ballot,
    pub phase: Phase,
}

/// An acceptor reply held back by the wait condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PendingReply {
    pub kind: ProposalKind,
    pub ballot: Ballot,
    pub ts: Timestamp,
    pub pred: PredSet,
    pub to: NodeId,
    pub blockers: BTreeSet<CommandId>,
}

/// Values a command was made stable with, before any loop breaking.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct StableValue {
    pub ts: Timestamp,
    pub pred: PredSet,
    pub ballot: Ballot,
}

/// Leader phase tag, exposed for hosts and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseTag {
    Recovering,
    FastProposal,
    SlowProposal,
    Retry,
}

#[derive(Debug, Default)]
pub(crate) struct Outbox {
    pub actions: Vec<Action>,
}

impl Outbox {
    pub(crate) fn send(&mut self, to: NodeId, msg: Message) {
        self.actions.push(Action::Send { to, msg });
    }

    pub(crate) fn note(&mut self, note: Note) {
        self.actions.push(Action::Note(note));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub(crate) cfg: NodeConfig,
    pub(crate) clock: LogicalClock,
    pub(crate) history: History,
    pub(crate) ballots: BallotMap,
    pub(crate) decided: BTreeSet<CommandId>,
    pub(crate) log: Vec<CommandId>,
    pub(crate) stable_values: BTreeMap<CommandId, StableValue>,
    pub(crate) undelivered: BTreeSet<CommandId>,
    pub(crate) waits: BTreeMap<CommandId, PendingReply>,
    pub(crate) leading: BTreeMap<CommandId, Leading>,
    pub(crate) leaders: BTreeMap<CommandId, NodeId>,
    pub(crate) proposed: BTreeSet<CommandId>,
}

impl NodeState {
    pub fn new(cfg: NodeConfig) -> Self {
        Self {
            clock: LogicalClock::new(cfg.id),
            cfg,
            history: History::new(),
            ballots: BallotMap::default(),
            decided: BTreeSet::new(),
            log: Vec::new(),
            stable_values: BTreeMap::new(),
            undelivered: BTreeSet::new(),
            waits: BTreeMap::new(),
            leading: BTreeMap::new(),
            leaders: BTreeMap::new(),
            proposed: BTreeSet::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.cfg.id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &LogicalClock {
        &self.clock
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn ballot_of(&self, id: &CommandId) -> Ballot {
        self.ballots.get(id)
    }

    pub fn decided(&self) -> &BTreeSet<CommandId> {
        &self.decided
    }

    /// Commands in the order this node decided them.
    pub fn decision_log(&self) -> &[CommandId] {
        &self.log
    }

    pub fn is_stable(&self, id: &CommandId) -> bool {
        self.history.get(id).is_some_and(|e| e.status == Status::Stable)
    }

    /// The node this one currently believes leads `id`.
    pub fn leader_of(&self, id: &CommandId) -> Option<NodeId> {
        self.leaders.get(id).copied()
    }

    pub fn leading_phase(&self, id: &CommandId) -> Option<(Ballot, PhaseTag)> {
        self.leading.get(id).map(|l| {
            let tag = match l.phase {
                Phase::Recovering { .. } => PhaseTag::Recovering,
                Phase::FastProposal { .. } => PhaseTag::FastProposal,
                Phase::SlowProposal { .. } => PhaseTag::SlowProposal,
                Phase::Retry { .. } => PhaseTag::Retry,
            };
            (l.ballot, tag)
        })
    }

    pub fn pending_waits(&self) -> &BTreeMap<CommandId, PendingReply> {
        &self.waits
    }

    /// The stable-phase values `id` was decided with, if decided here.
    pub fn decided_value(&self, id: &CommandId) -> Option<(Timestamp, &PredSet, Ballot)> {
        if !self.decided.contains(id) {
            return None;
        }
        self.stable_values.get(id).map(|v| (v.ts, &v.pred, v.ballot))
    }

    pub(crate) fn broadcast(&self, out: &mut Outbox, msg: Message) {
        for i in 0..self.cfg.quorum.n {
            out.send(NodeId(i as u32), msg.clone());
        }
    }

    pub fn compute_predecessors(&self, cmd: &Command, ts: Timestamp, whitelist: Option<&PredSet>) -> PredSet {
        compute_predecessors(&self.history, self.cfg.conflict, cmd, ts, whitelist)
    }

    pub fn wait_condition(&self, cmd: &Command, ts: Timestamp) -> WaitOutcome {
        wait_condition(&self.history, self.cfg.conflict, cmd, ts)
    }

    pub fn deliverable(&self, id: &CommandId) -> bool {
        deliverable(&self.history, &self.decided, id)
    }

    /// Starts the fast proposal phase for a new command with this node as
    /// its leader.
    pub fn propose(&mut self, cmd: Command) -> Vec<Action> {
        let mut out = Outbox::default();
        let id = cmd.id;
        if self.proposed.contains(&id) || self.history.contains(&id) {
            warn!("{}: ignoring duplicate proposal of {}", self.cfg.id, id);
            out.note(Note::DuplicatePropose { id });
            return out.actions;
        }
        self.proposed.insert(id);
        self.leaders.insert(id, self.cfg.id);
        let ts = self.clock.issue();
        let ballot = self.ballots.get(&id);
        self.start_fast_proposal(&mut out, cmd, ballot, ts, None);
        out.actions
    }

    pub fn handle(&mut self, from: NodeId, msg: Message) -> Vec<Action> {
        let mut out = Outbox::default();
        if let Some(ts) = msg.timestamp() {
            self.clock.observe(ts);
        }
        match msg {
            Message::FastPropose {
                cmd,
                ballot,
                ts,
                whitelist,
            } => self.on_fast_propose(&mut out, from, cmd, ballot, ts, whitelist),
            Message::SlowPropose { cmd, ballot, ts, pred } => self.on_slow_propose(&mut out, from, cmd, ballot, ts, pred),
            Message::Retry { cmd, ballot, ts, pred } => self.on_retry(&mut out, from, cmd, ballot, ts, pred),
            Message::Stable { cmd, ballot, ts, pred } => self.on_stable(&mut out, from, cmd, ballot, ts, pred),
            Message::FastProposeR {
                id,
                ballot,
                ok,
                ts,
                pred,
            } => self.on_fast_propose_reply(&mut out, from, id, ballot, Reply { ok, ts, pred }),
            Message::SlowProposeR {
                id,
                ballot,
                ok,
                ts,
                pred,
            } => self.on_slow_propose_reply(&mut out, from, id, ballot, Reply { ok, ts, pred }),
            Message::RetryR {
                id,
                ballot,
                ts,
                pred,
                extra_pred,
            } => self.on_retry_reply(&mut out, from, id, ballot, ts, pred, extra_pred),
            Message::Recovery { id, ballot } => self.on_recovery(&mut out, from, id, ballot),
            Message::RecoveryR { id, ballot, payload } => self.on_recovery_reply(&mut out, from, id, ballot, payload),
        }
        out.actions
    }

    pub fn on_timer(&mut self, timer: Timer) -> Vec<Action> {
        let mut out = Outbox::default();
        match timer {
            Timer::FastProposalTimeout { id, ballot } => {
                if let Some(l) = self.leading.get_mut(&id) {
                    if l.ballot == ballot {
                        if let Phase::FastProposal { timed_out, .. } = &mut l.phase {
                            *timed_out = true;
                            self.evaluate_fast(&mut out, id);
                        }
                    }
                }
            }
        }
        out.actions
    }

    /// Ballot gate for phase messages. Accepts `ballot >= Ballots[id]`,
    /// raises the local ballot and records the sender as leader.
    fn admit(&mut self, id: CommandId, ballot: Ballot, from: NodeId) -> bool {
        if ballot < self.ballots.get(&id) {
            return false;
        }
        self.raise_ballot(id, ballot);
        self.leaders.insert(id, from);
        true
    }

    /// Raises the ballot for `id`, dropping any leadership or parked reply
    /// that belongs to an older ballot.
    pub(crate) fn raise_ballot(&mut self, id: CommandId, ballot: Ballot) {
        self.ballots.raise(id, ballot);
        let current = self.ballots.get(&id);
        if self.leading.get(&id).is_some_and(|l| l.ballot < current) {
            self.leading.remove(&id);
        }
        if self.waits.get(&id).is_some_and(|w| w.ballot < current) {
            self.waits.remove(&id);
        }
    }

    /// A stable command is never downgraded by a later proposal; the sender
    /// is told the stable value instead.
    fn answer_with_stable(&self, out: &mut Outbox, to: NodeId, id: CommandId, ballot: Ballot) -> bool {
        let Some(entry) = self.history.get(&id) else {
            return false;
        };
        if entry.status != Status::Stable {
            return false;
        }
        let value = &self.stable_values[&id];
        out.send(
            to,
            Message::Stable {
                cmd: entry.command.clone(),
                ballot,
                ts: value.ts,
                pred: value.pred.clone(),
            },
        );
        true
    }

    // ---- acceptor side ----

    fn on_fast_propose(
        &mut self,
        out: &mut Outbox,
        from: NodeId,
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        whitelist: Option<PredSet>,
    ) {
        let id = cmd.id;
        if !self.admit(id, ballot, from) {
            return;
        }
        if self.answer_with_stable(out, from, id, ballot) {
            return;
        }
        let pred = self.compute_predecessors(&cmd, ts, whitelist.as_ref());
        let forced = whitelist.is_some();
        self.history.update(HistoryEntry {
            command: cmd,
            ts,
            pred: pred.clone(),
            status: Status::FastPending,
            ballot,
            forced,
        });
        self.waits.insert(
            id,
            PendingReply {
                kind: ProposalKind::Fast,
                ballot,
                ts,
                pred,
                to: from,
                blockers: BTreeSet::new(),
            },
        );
        self.entries_changed(out, [id]);
    }

    fn on_slow_propose(
        &mut self,
        out: &mut Outbox,
        from: NodeId,
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        pred: PredSet,
    ) {
        let id = cmd.id;
        if !self.admit(id, ballot, from) {
            return;
        }
        if self.answer_with_stable(out, from, id, ballot) {
            return;
        }
        // The proposed set is taken as is. Adding local predecessors here
        // could change the set a recovered fast decision was made with;
        // lower-timestamp commands missing from it are rejected by the wait
        // condition instead.
        self.history.update(HistoryEntry {
            command: cmd,
            ts,
            pred: pred.clone(),
            status: Status::SlowPending,
            ballot,
            forced: false,
        });
        self.waits.insert(
            id,
            PendingReply {
                kind: ProposalKind::Slow,
                ballot,
                ts,
                pred,
                to: from,
                blockers: BTreeSet::new(),
            },
        );
        self.entries_changed(out, [id]);
    }

    fn on_retry(&mut self, out: &mut Outbox, from: NodeId, cmd: Command, ballot: Ballot, ts: Timestamp, pred: PredSet) {
        let id = cmd.id;
        if !self.admit(id, ballot, from) {
            return;
        }
        if self.answer_with_stable(out, from, id, ballot) {
            return;
        }
        let extra_pred = self.compute_predecessors(&cmd, ts, None);
        self.waits.remove(&id);
        self.history.update(HistoryEntry {
            command: cmd,
            ts,
            pred: pred.clone(),
            status: Status::Accepted,
            ballot,
            forced: false,
        });
        out.send(
            from,
            Message::RetryR {
                id,
                ballot,
                ts,
                pred,
                extra_pred,
            },
        );
        self.wake_waiters(out, &[id]);
    }

    fn on_stable(&mut self, out: &mut Outbox, from: NodeId, cmd: Command, ballot: Ballot, ts: Timestamp, pred: PredSet) {
        let id = cmd.id;
        // A stable value is final whatever ballot carries it, so a lower
        // ballot does not get it refused.
        if ballot >= self.ballots.get(&id) {
            self.leaders.insert(id, from);
        }
        self.raise_ballot(id, ballot);
        if let Some(value) = self.stable_values.get_mut(&id) {
            if value.ts != ts || value.pred != pred {
                warn!("{}: second stable value for {} differs from the first", self.cfg.id, id);
                // Surface the disagreement only once the command is decided
                // here; until then the first value stands.
                let Some(index) = self.log.iter().position(|c| *c == id) else {
                    return;
                };
                out.actions.push(Action::Decide(Decision {
                    command: cmd,
                    ts,
                    pred,
                    ballot,
                    index,
                    repeat: true,
                }));
            } else {
                value.ballot = value.ballot.max(ballot);
                if let Some(e) = self.history.get_mut(&id) {
                    e.ballot = e.ballot.max(ballot);
                }
            }
            return;
        }
        self.waits.remove(&id);
        self.leading.remove(&id);
        self.history.update(HistoryEntry {
            command: cmd,
            ts,
            pred: pred.clone(),
            status: Status::Stable,
            ballot,
            forced: false,
        });
        self.stable_values.insert(id, StableValue { ts, pred, ballot });
        self.undelivered.insert(id);
        let mut changed = break_loop(&mut self.history, &id);
        changed.push(id);
        self.wake_waiters(out, &changed);
        self.deliver(out);
    }

    /// Decides every stable command whose predecessors are all decided,
    /// lowest timestamp first.
    fn deliver(&mut self, out: &mut Outbox) {
        loop {
            let next = self
                .undelivered
                .iter()
                .filter(|id| self.deliverable(id))
                .min_by_key(|id| self.history.get(id).map(|e| e.ts))
                .copied();
            let Some(id) = next else {
                break;
            };
            self.undelivered.remove(&id);
            self.decided.insert(id);
            let index = self.log.len();
            self.log.push(id);
            let value = &self.stable_values[&id];
            let entry = self.history.get(&id).expect("stable entry");
            out.actions.push(Action::Decide(Decision {
                command: entry.command.clone(),
                ts: value.ts,
                pred: value.pred.clone(),
                ballot: value.ballot,
                index,
                repeat: false,
            }));
        }
    }

    /// Re-evaluates parked replies for `fresh` (just installed) and for any
    /// reply blocked on an entry that changed.
    fn entries_changed<const N: usize>(&mut self, out: &mut Outbox, fresh: [CommandId; N]) {
        let mut queue: VecDeque<CommandId> = fresh.into_iter().collect();
        self.drain_waits(out, &mut queue);
    }

    fn wake_waiters(&mut self, out: &mut Outbox, changed: &[CommandId]) {
        let mut queue: VecDeque<CommandId> = self
            .waits
            .iter()
            .filter(|(_, w)| changed.iter().any(|c| w.blockers.contains(c)))
            .map(|(id, _)| *id)
            .collect();
        self.drain_waits(out, &mut queue);
    }

    fn drain_waits(&mut self, out: &mut Outbox, queue: &mut VecDeque<CommandId>) {
        while let Some(id) = queue.pop_front() {
            if let Some(changed) = self.try_reply(out, id) {
                for (waiter, w) in &self.waits {
                    if w.blockers.contains(&changed) && !queue.contains(waiter) {
                        queue.push_back(*waiter);
                    }
                }
            }
        }
    }

    /// Evaluates the parked reply for `id`. Returns `Some(id)` when the
    /// node's entry for `id` changed as a result (a rejection).
    fn try_reply(&mut self, out: &mut Outbox, id: CommandId) -> Option<CommandId> {
        let pending = self.waits.get(&id)?;
        let expected = match pending.kind {
            ProposalKind::Fast => Status::FastPending,
            ProposalKind::Slow => Status::SlowPending,
        };
        let entry = self.history.get(&id);
        let stale = pending.ballot < self.ballots.get(&id)
            || entry.is_none_or(|e| e.status != expected || e.ts != pending.ts || e.ballot != pending.ballot);
        if stale {
            self.waits.remove(&id);
            return None;
        }
        let cmd = entry.expect("checked above").command.clone();
        let outcome = if self.cfg.mutations.skip_wait {
            WaitOutcome::Ready(WaitVerdict::Ok)
        } else {
            self.wait_condition(&cmd, pending.ts)
        };
        let verdict = match outcome {
            WaitOutcome::Deferred(blockers) => {
                let pending = self.waits.get_mut(&id).expect("pending reply");
                if pending.blockers.is_empty() {
                    out.note(Note::WaitStarted {
                        id,
                        ballot: pending.ballot,
                        phase: pending.kind,
                        blockers: blockers.iter().copied().collect(),
                    });
                }
                pending.blockers = blockers;
                return None;
            }
            WaitOutcome::Ready(v) => v,
        };
        let pending = self.waits.remove(&id).expect("pending reply");
        if !pending.blockers.is_empty() {
            out.note(Note::WaitEnded {
                id,
                ballot: pending.ballot,
                ok: verdict == WaitVerdict::Ok,
            });
        }
        let (ok, ts, pred, changed) = match verdict {
            WaitVerdict::Ok => (true, pending.ts, pending.pred, None),
            WaitVerdict::Nack => {
                let suggested = self.clock.issue();
                let pred = self.compute_predecessors(&cmd, suggested, None);
                let e = self.history.get_mut(&id).expect("entry");
                e.status = Status::Rejected;
                e.forced = false;
                out.note(Note::Rejected {
                    id,
                    ballot: pending.ballot,
                    ts: pending.ts,
                    suggested,
                });
                (false, suggested, pred, Some(id))
            }
        };
        let msg = match pending.kind {
            ProposalKind::Fast => Message::FastProposeR {
                id,
                ballot: pending.ballot,
                ok,
                ts,
                pred,
            },
            ProposalKind::Slow => Message::SlowProposeR {
                id,
                ballot: pending.ballot,
                ok,
                ts,
                pred,
            },
        };
        out.send(pending.to, msg);
        changed
    }

    // ---- leader side ----

    pub(crate) fn start_fast_proposal(
        &mut self,
        out: &mut Outbox,
        cmd: Command,
        ballot: Ballot,
        ts: Timestamp,
        whitelist: Option<PredSet>,
    ) {
        let id = cmd.id;
        self.leading.insert(
            id,
            Leading {
                cmd: cmd.clone(),
                ballot,
                phase: Phase::FastProposal {
                    ts,
                    replies: BTreeMap::new(),
                    timed_out: false,
                },
            },
        );
        self.broadcast(
            out,
            Message::FastPropose {
                cmd,
                ballot,
                ts,
                whitelist,
            },
        );
        out.actions.push(Action::SetTimer(Timer::FastProposalTimeout { id, ballot }));
    }

    pub(crate) fn start_slow_proposal(&mut self, out: &mut Outbox, cmd: Command, ballot: Ballot, ts: Timestamp, pred: PredSet) {
        self.leading.insert(
            cmd.id,
            Leading {
                cmd: cmd.clone(),
                ballot,
                phase: Phase::SlowProposal {
                    ts,
                    replies: BTreeMap::new(),
                },
            },
        );
        self.broadcast(out, Message::SlowPropose { cmd, ballot, ts, pred });
    }

    pub(crate) fn start_retry(&mut self, out: &mut Outbox, cmd: Command, ballot: Ballot, ts: Timestamp, pred: PredSet) {
        self.leading.insert(
            cmd.id,
            Leading {
                cmd: cmd.clone(),
                ballot,
                phase: Phase::Retry {
                    ts,
                    pred: pred.clone(),
                    replies: BTreeMap::new(),
                },
            },
        );
        self.broadcast(out, Message::Retry { cmd, ballot, ts, pred });
    }

    pub(crate) fn start_stable(&mut self, out: &mut Outbox, cmd: Command, ballot: Ballot, ts: Timestamp, pred: PredSet) {
        self.leading.remove(&cmd.id);
        self.broadcast(out, Message::Stable { cmd, ballot, ts, pred });
    }

    fn on_fast_propose_reply(&mut self, out: &mut Outbox, from: NodeId, id: CommandId, ballot: Ballot, reply: Reply) {
        let Some(l) = self.leading.get_mut(&id) else {
            return;
        };
        if l.ballot != ballot {
            return;
        }
        if let Phase::FastProposal { replies, .. } = &mut l.phase {
            replies.entry(from).or_insert(reply);
            self.evaluate_fast(out, id);
        }
    }

    /// Decides the outcome of the fast proposal phase once a fast quorum
    /// replied, or a classic quorum replied and the timeout fired.
    fn evaluate_fast(&mut self, out: &mut Outbox, id: CommandId) {
        let q = self.cfg.quorum;
        let fast_quorum = if self.cfg.mutations.fast_on_classic_quorum { q.cq } else { q.fq };
        let l = &self.leading[&id];
        let Phase::FastProposal {
            ts,
            replies,
            timed_out,
        } = &l.phase
        else {
            return;
        };
        let n = replies.len();
        if n < fast_quorum && !(*timed_out && n >= q.cq) {
            return;
        }
        let (cmd, ballot, ts) = (l.cmd.clone(), l.ballot, *ts);
        let counted: Vec<NodeId> = replies.keys().copied().collect();
        let pred: PredSet = replies.values().flat_map(|r| r.pred.iter().copied()).collect();
        if replies.values().any(|r| !r.ok) {
            let max_ts = replies.values().map(|r| r.ts).max().expect("non-empty");
            out.note(Note::Transition {
                id,
                ballot,
                kind: Transition::FastToRetry,
                counted,
            });
            self.start_retry(out, cmd, ballot, max_ts, pred);
        } else if n >= fast_quorum {
            out.note(Note::Transition {
                id,
                ballot,
                kind: Transition::FastDecision,
                counted,
            });
            self.start_stable(out, cmd, ballot, ts, pred);
        } else {
            out.note(Note::Transition {
                id,
                ballot,
                kind: Transition::FastToSlowProposal,
                counted,
            });
            self.start_slow_proposal(out, cmd, ballot, ts, pred);
        }
    }

    fn on_slow_propose_reply(&mut self, out: &mut Outbox, from: NodeId, id: CommandId, ballot: Ballot, reply: Reply) {
        let cq = self.cfg.quorum.cq;
        let Some(l) = self.leading.get_mut(&id) else {
            return;
        };
        if l.ballot != ballot {
            return;
        }
        let Phase::SlowProposal { ts, replies } = &mut l.phase else {
            return;
        };
        replies.entry(from).or_insert(reply);
        if replies.len() < cq {
            return;
        }
        let (cmd, ts) = (l.cmd.clone(), *ts);
        let counted: Vec<NodeId> = replies.keys().copied().collect();
        let pred: PredSet = replies.values().flat_map(|r| r.pred.iter().copied()).collect();
        if replies.values().all(|r| r.ok) {
            out.note(Note::Transition {
                id,
                ballot,
                kind: Transition::SlowDecisionFromProposal,
                counted,
            });
            self.start_stable(out, cmd, ballot, ts, pred);
        } else {
            let max_ts = replies.values().map(|r| r.ts).max().expect("non-empty");
            out.note(Note::Transition {
                id,
                ballot,
                kind: Transition::SlowToRetry,
                counted,
            });
            self.start_retry(out, cmd, ballot, max_ts, pred);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_retry_reply(
        &mut self,
        out: &mut Outbox,
        from: NodeId,
        id: CommandId,
        ballot: Ballot,
        ts: Timestamp,
        pred: PredSet,
        extra_pred: PredSet,
    ) {
        let cq = self.cfg.quorum.cq;
        let Some(l) = self.leading.get_mut(&id) else {
            return;
        };
        if l.ballot != ballot {
            return;
        }
        let Phase::Retry {
            ts: retry_ts,
            pred: retry_pred,
            replies,
        } = &mut l.phase
        else {
            return;
        };
        if ts != *retry_ts {
            return;
        }
        let mut seen = pred;
        seen.extend(extra_pred);
        replies.entry(from).or_insert(seen);
        if replies.len() < cq {
            return;
        }
        let mut final_pred = retry_pred.clone();
        for extra in replies.values() {
            final_pred.extend(extra.iter().copied());
        }
        final_pred.remove(&id);
        let (cmd, ts) = (l.cmd.clone(), *retry_ts);
        let counted: Vec<NodeId> = replies.keys().copied().collect();
        out.note(Note::Transition {
            id,
            ballot,
            kind: Transition::SlowDecisionFromRetry,
            counted,
        });
        self.start_stable(out, cmd, ballot, ts, final_pred);
    }

    /// Drops history for commands that every node has decided. Only safe
    /// when no message about those commands is still in flight.
    pub fn compact(&mut self, ids: &BTreeSet<CommandId>) -> usize {
        let mut removed = 0;
        for id in ids {
            if !self.decided.contains(id) {
                continue;
            }
            if self.history.remove(id).is_some() {
                removed += 1;
            }
            self.stable_values.remove(id);
            self.ballots.remove(id);
            self.leaders.remove(id);
        }
        removed
    }
}

#[cfg(test)]
mod tests;
