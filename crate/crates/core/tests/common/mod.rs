//! Hand-driven cluster for scripted message schedules.
//!
//! Messages sit in one FIFO queue and are delivered only when a test says
//! so, which makes it easy to park a command in a chosen status before
//! crashing its leader.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use caesar::netsim::DecisionRecord;
use caesar::protocol::MessageKind;
use caesar::verify::{check_records, Report};
use caesar::{Action, Command, CommandId, KvCommand, Message, NodeConfig, NodeId, NodeState, QuorumConfig, Timer};

#[derive(Debug)]
pub struct Net {
    pub nodes: Vec<NodeState>,
    pub queue: VecDeque<(NodeId, NodeId, Message)>,
    pub timers: Vec<(NodeId, Timer)>,
    pub crashed: Vec<bool>,
    pub records: Vec<DecisionRecord>,
    steps: u64,
}

pub fn put(node: u32, seq: u64, key: &str) -> Command {
    Command::new(CommandId::new(NodeId(node), seq), KvCommand::put(key, vec![node as u8]))
}

impl Net {
    pub fn new(n: usize) -> Self {
        let q = QuorumConfig::new(n).unwrap();
        Self {
            nodes: (0..n as u32).map(|i| NodeState::new(NodeConfig::new(NodeId(i), q))).collect(),
            queue: VecDeque::new(),
            timers: Vec::new(),
            crashed: vec![false; n],
            records: Vec::new(),
            steps: 0,
        }
    }

    fn absorb(&mut self, at: NodeId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { to, msg } => self.queue.push_back((at, to, msg)),
                Action::SetTimer(t) => self.timers.push((at, t)),
                Action::Decide(d) => self.records.push(DecisionRecord {
                    node: at,
                    command: d.command,
                    ts: d.ts,
                    pred: d.pred,
                    ballot: d.ballot,
                    index: d.index,
                    repeat: d.repeat,
                    tick: self.steps,
                }),
                Action::Note(_) => {}
            }
        }
    }

    pub fn propose(&mut self, c: Command) {
        let at = c.id.proposer;
        let acts = self.nodes[at.index()].propose(c);
        self.absorb(at, acts);
    }

    pub fn recover(&mut self, at: u32, id: CommandId) {
        let acts = self.nodes[at as usize].start_recovery(id);
        self.absorb(NodeId(at), acts);
    }

    /// Delivers queued messages in FIFO order, skipping those `hold`
    /// matches, until none is deliverable. Held messages stay queued.
    pub fn deliver(&mut self, hold: impl Fn(NodeId, NodeId, &Message) -> bool) {
        loop {
            let Some(pos) = self.queue.iter().position(|(f, t, m)| !hold(*f, *t, m)) else {
                return;
            };
            let (from, to, msg) = self.queue.remove(pos).unwrap();
            if self.crashed[to.index()] {
                continue;
            }
            self.steps += 1;
            let acts = self.nodes[to.index()].handle(from, msg);
            self.absorb(to, acts);
            assert!(self.steps < 100_000, "schedule does not terminate");
        }
    }

    /// Fires every pending timer of live nodes.
    pub fn fire_timers(&mut self) -> bool {
        let due: Vec<_> = std::mem::take(&mut self.timers);
        let mut fired = false;
        for (at, t) in due {
            if !self.crashed[at.index()] {
                fired = true;
                let acts = self.nodes[at.index()].on_timer(t);
                self.absorb(at, acts);
            }
        }
        fired
    }

    /// Delivers everything and fires timers until the system is idle.
    pub fn settle(&mut self) {
        loop {
            self.deliver(|_, _, _| false);
            if !self.fire_timers() {
                return;
            }
        }
    }

    /// Crash-stop: the node stops, and what it still had in flight is lost.
    pub fn crash(&mut self, node: u32) {
        let n = NodeId(node);
        self.crashed[node as usize] = true;
        self.queue.retain(|(f, t, _)| *f != n && *t != n);
        self.timers.retain(|(at, _)| *at != n);
    }

    pub fn live(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().filter(|s| !self.crashed[s.id().index()])
    }

    /// (ts, pred) the given node decided for `id`, if any.
    pub fn decided_at(&self, node: u32, id: CommandId) -> Option<DecisionRecord> {
        self.records
            .iter()
            .find(|r| r.node == NodeId(node) && r.command.id == id && !r.repeat)
            .cloned()
    }

    pub fn check(&self) -> Report {
        let logs: BTreeMap<NodeId, Vec<CommandId>> =
            self.nodes.iter().map(|s| (s.id(), s.decision_log().to_vec())).collect();
        let commands = self.records.iter().map(|r| (r.command.id, r.command.clone())).collect();
        check_records(&self.records, &logs, &commands, caesar::rsm::conflicts)
    }
}

pub fn is(kind: MessageKind) -> impl Fn(NodeId, NodeId, &Message) -> bool {
    move |_, _, m| m.kind() == kind
}

use caesar::Status;

/// What a scripted leader-crash scenario ended with.
#[derive(Debug)]
pub struct RecoveryRun {
    /// Status of the command on each survivor when the leader crashed.
    pub at_crash: Vec<Option<Status>>,
    /// What the leader decided before crashing, if anything.
    pub before: Option<DecisionRecord>,
    pub net: Net,
    pub id: CommandId,
}

impl RecoveryRun {
    /// Every survivor decided the command, with the leader's value if the
    /// leader had one, and the checkers found nothing.
    pub fn verdict(&self) -> Result<(), String> {
        let mut value = self.before.as_ref().map(|d| (d.ts, d.pred.clone()));
        for s in self.net.live() {
            let d = self
                .net
                .decided_at(s.id().0, self.id)
                .ok_or_else(|| format!("{} never decided {}", s.id(), self.id))?;
            match &value {
                Some(v) if *v != (d.ts, d.pred.clone()) => {
                    return Err(format!("{} decided {:?} {:?}, expected {:?}", s.id(), d.ts, d.pred, v))
                }
                Some(_) => {}
                None => value = Some((d.ts, d.pred)),
            }
        }
        let report = self.net.check();
        if !report.passed() {
            return Err(report.to_string());
        }
        if self.net.live().any(|s| !s.pending_waits().is_empty()) {
            return Err("replies still deferred after recovery".into());
        }
        Ok(())
    }
}

/// Five nodes, conflicting commands on key `k`. Drives the leader's
/// command into `status` on the survivors, crashes the leader and lets a
/// survivor recover the command.
pub fn recovery_scenario(status: Status) -> RecoveryRun {
    use MessageKind::*;
    let mut net = Net::new(5);
    let (p0, p1, p3, p4) = (NodeId(0), NodeId(1), NodeId(3), NodeId(4));
    let stable_out = move |leader: NodeId| move |f: NodeId, t: NodeId, m: &Message| f == leader && t != leader && m.kind() == Stable;
    let (leader, recoverer) = match status {
        Status::FastPending => {
            // p4 decides c at <0,4> with an empty predecessor set, from
            // the replies of p1..p3. Then p0, which never saw c, proposes
            // c̄ at the lower <0,0>; it has to wait behind c everywhere.
            let c = put(4, 0, "k");
            net.propose(c);
            net.deliver(|f, t, m| (f == p4 && t == p0) || stable_out(p4)(f, t, m));
            net.propose(put(0, 0, "k"));
            net.deliver(|f, t, m| (f == p4 && t == p0) || stable_out(p4)(f, t, m));
            (p4, 1)
        }
        Status::SlowPending => {
            // Only a classic quorum sees the fast proposal, the timeout
            // moves c to the slow path, and the leader decides alone.
            net.propose(put(0, 0, "k"));
            let late = move |f: NodeId, t: NodeId, m: &Message| m.kind() == FastPropose && f == p0 && (t == p3 || t == p4);
            net.deliver(late);
            assert!(net.fire_timers());
            net.deliver(|f, t, m| late(f, t, m) || stable_out(p0)(f, t, m));
            (p0, 1)
        }
        Status::Accepted => {
            // c̄ from p4 is decided among p1..p4 at <0,4> before p0 hears
            // of it, so p0's c at <0,0> is rejected and retried; p0 decides
            // after the retry.
            net.propose(put(4, 0, "k"));
            net.deliver(|f, t, _| f == p0 || t == p0);
            net.propose(put(0, 0, "k"));
            net.deliver(stable_out(p0));
            (p0, 1)
        }
        Status::Rejected => {
            // As above, but p0 crashes before its retry goes out.
            net.propose(put(4, 0, "k"));
            net.deliver(|f, t, _| f == p0 || t == p0);
            net.propose(put(0, 0, "k"));
            net.deliver(|f, _, m| f == p0 && m.kind() == Retry);
            (p0, 1)
        }
        Status::Stable => {
            // Only p1 learns the decision; p2 recovers without it.
            net.propose(put(0, 0, "k"));
            net.deliver(|f, t, m| stable_out(p0)(f, t, m) && t != p1);
            (p0, 2)
        }
    };
    let id = CommandId::new(leader, 0);
    let at_crash = net
        .nodes
        .iter()
        .filter(|s| s.id() != leader)
        .map(|s| s.history().get(&id).map(|e| e.status))
        .collect();
    let before = net.decided_at(leader.0, id);
    net.crash(leader.0);
    net.recover(recoverer, id);
    net.settle();
    RecoveryRun { at_crash, before, net, id }
}
