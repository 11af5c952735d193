//! Bounded exhaustive exploration of small clusters.
//!
//! Every deliverable message, pending timer, crash and recovery start is a
//! separate choice. Deliveries at different nodes interleave freely; within
//! one link (or one node's whole inbox, without `per_link`) a message may
//! overtake at most `reorder_window - 1` older ones. States are memoised by
//! a 128-bit fingerprint, and the first violating path is kept as a
//! counterexample.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{BuildHasherDefault, Hash, Hasher};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandId, NodeId};
use crate::error::ConfigError;
use crate::netsim::{ConflictRelation, DecisionRecord};
use crate::protocol::{Action, Message, MessageKind, Mutations, NodeConfig, NodeState, Timer};
use crate::quorum::QuorumConfig;
use crate::rsm::KvCommand;
use crate::verify::checks::{check_records, check_predecessor_inclusion, check_agreement, check_wait_graph, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreConfig {
    pub n: usize,
    /// Proposing node and key of each command. Commands are proposed as
    /// explorer choices, so their relative order is explored too.
    pub commands: Vec<(u32, String)>,
    #[serde(default)]
    pub conflict: ConflictRelation,
    #[serde(default)]
    pub mutations: Mutations,
    /// How many older undelivered messages to the same node a message may
    /// overtake, plus one. `None` allows any reordering.
    #[serde(default)]
    pub reorder_window: Option<usize>,
    /// Count the window per sender-receiver link instead of per receiving
    /// node, so messages from different senders interleave freely.
    #[serde(default)]
    pub per_link: bool,
    /// Allow one node to crash at any point. Its undelivered messages are
    /// lost; deliveries before the crash cover the cases where they are not.
    #[serde(default)]
    pub crash: bool,
    /// Recovery attempts each live node may start per command once the
    /// command's leader has crashed.
    #[serde(default = "default_recoveries")]
    pub max_recoveries: u32,
    /// Distinct states to visit before giving up.
    #[serde(default = "default_max_states")]
    pub max_states: usize,
    #[serde(default = "default_true")]
    pub stop_at_first: bool,
}

fn default_recoveries() -> u32 {
    1
}

fn default_max_states() -> usize {
    10_000_000
}

fn default_true() -> bool {
    true
}

impl ExploreConfig {
    /// Three nodes, two commands on one key from different proposers, FIFO
    /// links.
    pub fn small() -> Self {
        Self {
            n: 3,
            commands: vec![(0, "x".into()), (1, "x".into())],
            conflict: ConflictRelation::SameKey,
            mutations: Mutations::default(),
            reorder_window: Some(1),
            per_link: true,
            crash: false,
            max_recoveries: default_recoveries(),
            max_states: default_max_states(),
            stop_at_first: true,
        }
    }
}

/// One explorer choice, as recorded in counterexample paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "kebab-case")]
pub enum Step {
    Propose { node: NodeId, id: CommandId },
    Deliver { from: NodeId, to: NodeId, kind: MessageKind, id: CommandId },
    Timer { node: NodeId, id: CommandId },
    Crash { node: NodeId },
    Recover { node: NodeId, id: CommandId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub violations: Vec<Violation>,
    pub path: Vec<Step>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub states: usize,
    pub terminals: usize,
    /// Terminal states where some live node has not decided every command.
    pub stuck: usize,
    /// The state budget ran out before the search finished.
    pub truncated: bool,
    pub violating_states: usize,
    pub counterexample: Option<Counterexample>,
}

impl ExploreReport {
    pub fn passed(&self) -> bool {
        self.violating_states == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Choice {
    Propose(usize),
    Deliver(usize),
    Timer(NodeId, Timer),
    Crash(NodeId),
    Recover(NodeId, CommandId),
}

#[derive(Clone)]
struct World {
    /// Shared between sibling states until a step touches the node.
    nodes: Vec<Rc<NodeState>>,
    crashed: Option<NodeId>,
    flight: Vec<(NodeId, NodeId, Message)>,
    timers: BTreeSet<(NodeId, Timer)>,
    proposed: Vec<bool>,
    recoveries: BTreeMap<(NodeId, CommandId), u32>,
    records: Vec<DecisionRecord>,
}

impl World {
    fn fingerprint(&self, per_link: bool, buf: &mut Vec<u8>) -> u128 {
        buf.clear();
        let mut h = ByteSink(buf);
        self.nodes.hash(&mut h);
        self.crashed.hash(&mut h);
        // Only the order within each lane is observable.
        let mut lanes: BTreeMap<(NodeId, NodeId), Vec<&(NodeId, NodeId, Message)>> = BTreeMap::new();
        for m in &self.flight {
            let from = if per_link { m.0 } else { m.1 };
            lanes.entry((from, m.1)).or_default().push(m);
        }
        lanes.hash(&mut h);
        self.timers.hash(&mut h);
        self.proposed.hash(&mut h);
        self.recoveries.hash(&mut h);
        let mut recs: Vec<_> = self
            .records
            .iter()
            .map(|r| (r.node, r.command.id, r.ts, &r.pred, r.index))
            .collect();
        recs.sort();
        recs.hash(&mut h);
        xxhash_rust::xxh3::xxh3_128(buf)
    }

    fn alive(&self, node: NodeId) -> bool {
        self.crashed != Some(node)
    }
}

/// Collects the bytes a `Hash` impl feeds in, so the whole state is
/// hashed in one pass.
struct ByteSink<'a>(&'a mut Vec<u8>);

impl Hasher for ByteSink<'_> {
    fn write(&mut self, bytes: &[u8]) {
        self.0.extend_from_slice(bytes);
    }

    fn finish(&self) -> u64 {
        unreachable!("only used to serialise")
    }
}

/// Fingerprints are already uniform; use their low bits as the set hash.
#[derive(Default)]
struct Passthrough(u64);

impl Hasher for Passthrough {
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 = (self.0 << 8) | u64::from(*b);
        }
    }

    fn write_u128(&mut self, v: u128) {
        self.0 = v as u64;
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

pub struct Explorer {
    cfg: ExploreConfig,
    commands: Vec<Command>,
    seen: HashSet<u128, BuildHasherDefault<Passthrough>>,
    buf: Vec<u8>,
    report: ExploreReport,
    path: Vec<Step>,
}

impl Explorer {
    pub fn new(cfg: ExploreConfig) -> Result<Self, ConfigError> {
        QuorumConfig::new(cfg.n)?;
        let mut seqs = vec![0u64; cfg.n];
        let mut commands = Vec::new();
        for (node, key) in &cfg.commands {
            let node = *node;
            if node as usize >= cfg.n {
                return Err(ConfigError::NodeOutOfRange { node, n: cfg.n });
            }
            let seq = &mut seqs[node as usize];
            commands.push(Command::new(
                CommandId::new(NodeId(node), *seq),
                KvCommand::put(key.clone(), vec![*seq as u8]),
            ));
            *seq += 1;
        }
        Ok(Self {
            cfg,
            commands,
            seen: HashSet::default(),
            buf: Vec::new(),
            report: ExploreReport::default(),
            path: Vec::new(),
        })
    }

    pub fn run(mut self) -> ExploreReport {
        let quorum = QuorumConfig::new(self.cfg.n).expect("checked in new");
        let nodes = (0..self.cfg.n as u32)
            .map(|i| {
                let mut c = NodeConfig::new(NodeId(i), quorum);
                c.conflict = self.cfg.conflict.function();
                c.mutations = self.cfg.mutations;
                Rc::new(NodeState::new(c))
            })
            .collect();
        let world = World {
            nodes,
            crashed: None,
            flight: Vec::new(),
            timers: BTreeSet::new(),
            proposed: vec![false; self.commands.len()],
            recoveries: BTreeMap::new(),
            records: Vec::new(),
        };
        self.dfs(world);
        self.report
    }

    fn done(&self) -> bool {
        self.report.truncated || (self.cfg.stop_at_first && self.report.counterexample.is_some())
    }

    fn dfs(&mut self, world: World) {
        if self.done() {
            return;
        }
        let fp = world.fingerprint(self.cfg.per_link, &mut self.buf);
        if !self.seen.insert(fp) {
            return;
        }
        self.report.states += 1;
        if self.report.states >= self.cfg.max_states {
            self.report.truncated = true;
        }
        let choices = self.choices(&world);
        let mut violations: Vec<Violation> = world.nodes.iter().flat_map(|n| check_wait_graph(n)).collect();
        if choices.is_empty() {
            self.report.terminals += 1;
            if self.stuck(&world) {
                self.report.stuck += 1;
            }
            violations.extend(self.terminal_check(&world));
        }
        if !violations.is_empty() {
            self.flag(violations);
            return;
        }
        for c in choices {
            let mut next = world.clone();
            let (step, new_records) = self.apply(&mut next, c);
            self.path.push(step);
            if new_records {
                let conflict = self.cfg.conflict.function();
                let mut v = check_predecessor_inclusion(&next.records, conflict);
                v.extend(check_agreement(&next.records));
                if !v.is_empty() {
                    self.flag(v);
                    self.path.pop();
                    if self.done() {
                        return;
                    }
                    continue;
                }
            }
            self.dfs(next);
            self.path.pop();
            if self.done() {
                return;
            }
        }
    }

    fn flag(&mut self, violations: Vec<Violation>) {
        self.report.violating_states += 1;
        if self.report.counterexample.is_none() {
            self.report.counterexample = Some(Counterexample {
                violations,
                path: self.path.clone(),
            });
        }
    }

    fn choices(&self, w: &World) -> Vec<Choice> {
        let mut out = Vec::new();
        for (i, cmd) in self.commands.iter().enumerate() {
            if !w.proposed[i] && w.alive(cmd.id.proposer) {
                out.push(Choice::Propose(i));
            }
        }
        // `flight` is in send order, so a message's position among those
        // bound for the same node is the number it would overtake.
        let n = self.cfg.n;
        let mut queued = vec![0usize; n * n];
        for (i, m) in w.flight.iter().enumerate() {
            let lane = if self.cfg.per_link { m.0.index() * n } else { 0 } + m.1.index();
            let older = &mut queued[lane];
            let in_window = self.cfg.reorder_window.map_or(true, |win| *older < win);
            *older += 1;
            // Identical copies lead to identical successors.
            if in_window && !w.flight[..i].contains(m) {
                out.push(Choice::Deliver(i));
            }
        }
        for (node, t) in &w.timers {
            out.push(Choice::Timer(*node, *t));
        }
        if self.cfg.crash && w.crashed.is_none() {
            for i in 0..self.cfg.n as u32 {
                out.push(Choice::Crash(NodeId(i)));
            }
        }
        if let Some(dead) = w.crashed {
            for node in &w.nodes {
                let me = node.id();
                if me == dead {
                    continue;
                }
                for cmd in &self.commands {
                    let id = cmd.id;
                    if !node.history().contains(&id) || node.is_stable(&id) {
                        continue;
                    }
                    if node.leader_of(&id).unwrap_or(id.proposer) != dead
                        && !w.recoveries.contains_key(&(me, id))
                    {
                        continue;
                    }
                    if w.recoveries.get(&(me, id)).copied().unwrap_or(0) < self.cfg.max_recoveries {
                        out.push(Choice::Recover(me, id));
                    }
                }
            }
        }
        out
    }

    fn apply(&self, w: &mut World, c: Choice) -> (Step, bool) {
        let (node, step, actions) = match c {
            Choice::Propose(i) => {
                w.proposed[i] = true;
                let cmd = self.commands[i].clone();
                let node = cmd.id.proposer;
                let step = Step::Propose { node, id: cmd.id };
                (node, step, Rc::make_mut(&mut w.nodes[node.index()]).propose(cmd))
            }
            Choice::Deliver(i) => {
                let (from, to, msg) = w.flight.remove(i);
                let step = Step::Deliver {
                    from,
                    to,
                    kind: msg.kind(),
                    id: msg.command_id(),
                };
                (to, step, Rc::make_mut(&mut w.nodes[to.index()]).handle(from, msg))
            }
            Choice::Timer(node, t) => {
                w.timers.remove(&(node, t));
                let Timer::FastProposalTimeout { id, .. } = t;
                (node, Step::Timer { node, id }, Rc::make_mut(&mut w.nodes[node.index()]).on_timer(t))
            }
            Choice::Crash(node) => {
                w.crashed = Some(node);
                // Links are only reliable between live nodes: whatever the
                // crashed node still had in flight is lost with it.
                w.flight.retain(|(from, to, _)| *to != node && *from != node);
                w.timers.retain(|(n, _)| *n != node);
                return (Step::Crash { node }, false);
            }
            Choice::Recover(node, id) => {
                *w.recoveries.entry((node, id)).or_insert(0) += 1;
                (node, Step::Recover { node, id }, Rc::make_mut(&mut w.nodes[node.index()]).start_recovery(id))
            }
        };
        let mut new_records = false;
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    if w.alive(to) {
                        w.flight.push((node, to, msg));
                    }
                }
                Action::SetTimer(t) => {
                    w.timers.insert((node, t));
                }
                Action::Decide(d) => {
                    new_records = true;
                    w.records.push(DecisionRecord {
                        node,
                        command: d.command,
                        ts: d.ts,
                        pred: d.pred,
                        ballot: d.ballot,
                        index: d.index,
                        repeat: d.repeat,
                        tick: 0,
                    });
                }
                Action::Note(_) => {}
            }
        }
        (step, new_records)
    }

    /// Some command a live node knows of is not decided on every live node.
    fn stuck(&self, w: &World) -> bool {
        let live: Vec<&NodeState> = w.nodes.iter().map(|n| &**n).filter(|n| w.alive(n.id())).collect();
        self.commands.iter().any(|c| {
            live.iter().any(|n| n.history().contains(&c.id)) && live.iter().any(|n| !n.decided().contains(&c.id))
        })
    }

    fn terminal_check(&self, w: &World) -> Vec<Violation> {
        let mut logs: BTreeMap<NodeId, Vec<CommandId>> = BTreeMap::new();
        for r in w.records.iter().filter(|r| !r.repeat) {
            logs.entry(r.node).or_default().push(r.command.id);
        }
        let commands = self.commands.iter().map(|c| (c.id, c.clone())).collect();
        check_records(&w.records, &logs, &commands, self.cfg.conflict.function()).violations
    }
}

pub fn explore(cfg: ExploreConfig) -> Result<ExploreReport, ConfigError> {
    Ok(Explorer::new(cfg)?.run())
}
