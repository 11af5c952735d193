//! Discrete-event host for a set of protocol nodes.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::command::{Command, CommandId, NodeId};
use crate::error::ConfigError;
use crate::experiment::workload::{CommandGenerator, Mode};
use crate::netsim::trace::{Record, Trace, Undecided, TRACE_FORMAT};
use crate::netsim::Scenario;
use crate::protocol::{Action, Message, NodeConfig, NodeState, Timer};
use crate::rsm::{KvCommand, Store};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    Deliver { msg_id: u64, from: NodeId, to: NodeId, msg: Message },
    Timer { node: NodeId, timer: Timer },
    Crash { node: NodeId },
    Propose { node: NodeId, cmd: Command },
    Arrival,
    SuspicionCheck { node: NodeId, id: CommandId },
}

/// A protocol node plus what its host keeps around it.
#[derive(Debug, Clone)]
pub struct Replica {
    pub state: NodeState,
    pub store: Store,
    pub crashed: bool,
    last_heard: Vec<u64>,
    watched: BTreeSet<CommandId>,
    /// Suspicion checks that found the command still undecided while this
    /// node was leading it.
    stalled_checks: BTreeMap<CommandId, u32>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: Trace,
    pub quiescent: bool,
    pub end_tick: u64,
    pub undecided: Vec<Undecided>,
}

pub struct Simulation {
    scenario: Scenario,
    replicas: Vec<Replica>,
    queue: BTreeMap<(u64, u64), Event>,
    now: u64,
    seq: u64,
    next_msg: u64,
    events: u64,
    net_rng: ChaCha8Rng,
    workload: Option<CommandGenerator>,
    proposed: BTreeMap<CommandId, (NodeId, u64)>,
    trace: Trace,
    record_messages: bool,
    next_seq: Vec<u64>,
    client_commands: BTreeSet<CommandId>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, ConfigError> {
        scenario.validate()?;
        let n = scenario.n;
        let quorum = scenario.quorum();
        let replicas = (0..n as u32)
            .map(|i| {
                let mut cfg = NodeConfig::new(NodeId(i), quorum);
                cfg.conflict = scenario.conflict.function();
                cfg.mutations = scenario.mutations;
                Replica {
                    state: NodeState::new(cfg),
                    store: Store::new(),
                    crashed: false,
                    last_heard: vec![0; n],
                    watched: BTreeSet::new(),
                    stalled_checks: BTreeMap::new(),
                }
            })
            .collect();
        let mut trace = Trace::new();
        trace.push(Record::Header {
            format: TRACE_FORMAT,
            scenario: scenario.clone(),
        });
        let workload = scenario
            .workload
            .clone()
            .map(|w| CommandGenerator::new(w, scenario.seed));
        let mut sim = Self {
            net_rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            replicas,
            queue: BTreeMap::new(),
            now: 0,
            seq: 0,
            next_msg: 0,
            events: 0,
            workload,
            proposed: BTreeMap::new(),
            trace,
            record_messages: true,
            next_seq: vec![0; n],
            client_commands: BTreeSet::new(),
            scenario,
        };
        for c in sim.scenario.crashes.clone() {
            sim.schedule(c.at, Event::Crash { node: NodeId(c.node) });
        }
        for p in sim.scenario.proposals.clone() {
            let node = NodeId(p.node);
            let cmd = sim.new_command(node, KvCommand::put(p.key, p.value.into_bytes()));
            sim.schedule(p.at, Event::Propose { node, cmd });
        }
        sim.start_workload();
        Ok(sim)
    }

    /// Omits send/deliver records from the trace. Decisions, notes and
    /// faults are still recorded.
    pub fn without_message_records(mut self) -> Self {
        self.record_messages = false;
        self
    }

    fn new_command(&mut self, node: NodeId, op: KvCommand) -> Command {
        let seq = &mut self.next_seq[node.index()];
        let id = CommandId::new(node, *seq);
        *seq += 1;
        Command::new(id, op)
    }

    fn start_workload(&mut self) {
        let Some(gen) = &mut self.workload else {
            return;
        };
        match gen.config().mode {
            Mode::ClosedLoop => {
                let clients = gen.config().clients_per_node;
                for _ in 0..clients {
                    for i in 0..self.scenario.n as u32 {
                        self.client_propose(NodeId(i), 0);
                    }
                }
            }
            Mode::OpenLoop { .. } => {
                let dt = gen.next_interarrival();
                self.schedule(dt, Event::Arrival);
            }
        }
    }

    fn client_propose(&mut self, node: NodeId, at: u64) {
        let Some(op) = self.workload.as_mut().and_then(|g| g.next_op()) else {
            return;
        };
        let cmd = self.new_command(node, op);
        self.client_commands.insert(cmd.id);
        self.schedule(at, Event::Propose { node, cmd });
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn replica(&self, node: NodeId) -> &Replica {
        &self.replicas[node.index()]
    }

    pub fn node(&self, node: NodeId) -> &NodeState {
        &self.replicas[node.index()].state
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Injects a put at `at` on `node` and returns its id.
    pub fn propose_at(&mut self, at: u64, node: NodeId, key: &str, value: &[u8]) -> CommandId {
        let cmd = self.new_command(node, KvCommand::put(key, value.to_vec()));
        let id = cmd.id;
        self.schedule(at.max(self.now), Event::Propose { node, cmd });
        id
    }

    pub fn crash_at(&mut self, node: NodeId, at: u64) {
        self.schedule(at.max(self.now), Event::Crash { node });
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        let key = (at, self.seq);
        self.seq += 1;
        self.queue.insert(key, ev);
    }

    fn delay(&mut self, from: NodeId, to: NodeId) -> u64 {
        let base = self.scenario.base_delay(from, to);
        if from == to || self.scenario.jitter == 0 {
            base
        } else {
            base + self.net_rng.gen_range(0..=self.scenario.jitter)
        }
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Processes the next event. Returns false when nothing is left or the
    /// tick limit is reached.
    pub fn step(&mut self) -> bool {
        let Some((&(at, _), _)) = self.queue.first_key_value() else {
            return false;
        };
        if at > self.scenario.tick_limit {
            return false;
        }
        let ((at, _), ev) = self.queue.pop_first().expect("non-empty");
        self.now = at;
        self.events += 1;
        self.dispatch(ev);
        true
    }

    /// Runs every event scheduled at or before `tick`.
    pub fn run_until(&mut self, tick: u64) {
        while let Some((&(at, _), _)) = self.queue.first_key_value() {
            if at > tick || at > self.scenario.tick_limit {
                break;
            }
            self.step();
        }
        self.now = self.now.max(tick.min(self.scenario.tick_limit));
    }

    pub fn run(mut self) -> SimOutcome {
        while self.step() {}
        self.finish()
    }

    /// Closes the trace with a liveness report.
    pub fn finish(mut self) -> SimOutcome {
        let quiescent = self.queue.is_empty();
        let undecided = self.undecided();
        if !undecided.is_empty() {
            debug!("{} command(s) undecided at tick {}", undecided.len(), self.now);
        }
        self.trace.push(Record::End {
            t: self.now,
            events: self.events,
            quiescent,
            undecided: undecided.clone(),
        });
        SimOutcome {
            trace: self.trace,
            quiescent,
            end_tick: self.now,
            undecided,
        }
    }

    /// Proposed commands some live node has not decided.
    pub fn undecided(&self) -> Vec<Undecided> {
        self.proposed
            .keys()
            .filter_map(|id| {
                let missing: Vec<NodeId> = self
                    .replicas
                    .iter()
                    .filter(|r| !r.crashed && !r.state.decided().contains(id))
                    .map(|r| r.state.id())
                    .collect();
                (!missing.is_empty()).then_some(Undecided { id: *id, missing })
            })
            .collect()
    }

    pub fn proposed(&self) -> &BTreeMap<CommandId, (NodeId, u64)> {
        &self.proposed
    }

    fn alive(&self) -> Vec<NodeId> {
        self.replicas
            .iter()
            .filter(|r| !r.crashed)
            .map(|r| r.state.id())
            .collect()
    }

    fn dispatch(&mut self, ev: Event) {
        let now = self.now;
        match ev {
            Event::Deliver { msg_id, from, to, msg } => {
                if self.replicas[to.index()].crashed {
                    if self.record_messages {
                        self.trace.push(Record::Drop {
                            t: now,
                            msg_id,
                            from,
                            to,
                        });
                    }
                    return;
                }
                if self.record_messages {
                    self.trace.push(Record::Deliver {
                        t: now,
                        msg_id,
                        from,
                        to,
                        kind: msg.kind(),
                        id: msg.command_id(),
                    });
                }
                let id = msg.command_id();
                let r = &mut self.replicas[to.index()];
                r.last_heard[from.index()] = now;
                let actions = r.state.handle(from, msg);
                self.watch(to, id);
                self.apply(to, actions);
            }
            Event::Timer { node, timer } => {
                if self.replicas[node.index()].crashed {
                    return;
                }
                self.trace.push(Record::Timer { t: now, node, timer });
                let actions = self.replicas[node.index()].state.on_timer(timer);
                self.apply(node, actions);
            }
            Event::Crash { node } => {
                let r = &mut self.replicas[node.index()];
                if !r.crashed {
                    r.crashed = true;
                    self.trace.push(Record::Crash { t: now, node });
                }
            }
            Event::Propose { node, cmd } => {
                if self.replicas[node.index()].crashed {
                    return;
                }
                let id = cmd.id;
                self.trace.push(Record::Propose {
                    t: now,
                    node,
                    cmd: cmd.clone(),
                });
                self.proposed.entry(id).or_insert((node, now));
                let actions = self.replicas[node.index()].state.propose(cmd);
                self.watch(node, id);
                self.apply(node, actions);
            }
            Event::Arrival => {
                let alive = self.alive();
                let gen = self.workload.as_mut().expect("arrivals need a workload");
                if let Some(node) = gen.pick_node(&alive) {
                    self.client_propose(node, now);
                }
                let gen = self.workload.as_mut().expect("arrivals need a workload");
                if !gen.exhausted() && !alive.is_empty() {
                    let dt = gen.next_interarrival();
                    self.schedule(now + dt, Event::Arrival);
                }
            }
            Event::SuspicionCheck { node, id } => self.suspicion_check(node, id),
        }
    }

    /// Starts a suspicion timer the first time a node hears of a command.
    fn watch(&mut self, node: NodeId, id: CommandId) {
        let r = &mut self.replicas[node.index()];
        if r.state.is_stable(&id) || !r.state.history().contains(&id) || !r.watched.insert(id) {
            return;
        }
        let at = self.now + self.check_interval(node);
        self.schedule(at, Event::SuspicionCheck { node, id });
    }

    /// Staggered per node so that concurrent recoverers rarely collide.
    fn check_interval(&self, node: NodeId) -> u64 {
        let base = self.scenario.suspicion_timeout();
        base + node.0 as u64 * self.scenario.max_one_way()
    }

    fn suspicion_check(&mut self, node: NodeId, id: CommandId) {
        let now = self.now;
        let timeout = self.scenario.suspicion_timeout();
        let interval = self.check_interval(node);
        let r = &mut self.replicas[node.index()];
        if r.crashed || r.state.is_stable(&id) {
            r.watched.remove(&id);
            r.stalled_checks.remove(&id);
            return;
        }
        let leader = r.state.leader_of(&id).unwrap_or(id.proposer);
        let recover = if leader == node {
            // Our own phase (or recovery) made no progress for a whole
            // interval twice in a row: start over at a higher ballot.
            let stalled = r.stalled_checks.entry(id).or_insert(0);
            *stalled += 1;
            *stalled >= 2
        } else {
            now.saturating_sub(r.last_heard[leader.index()]) >= timeout
        };
        if recover {
            r.stalled_checks.remove(&id);
            self.trace.push(Record::Suspect {
                t: now,
                node,
                leader,
                id,
            });
            trace!("{node} suspects {leader} for {id} at {now}");
            let actions = self.replicas[node.index()].state.start_recovery(id);
            self.apply(node, actions);
        }
        self.schedule(now + interval, Event::SuspicionCheck { node, id });
    }

    fn apply(&mut self, node: NodeId, actions: Vec<Action>) {
        let now = self.now;
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    let at = now + self.delay(node, to);
                    let msg_id = self.next_msg;
                    self.next_msg += 1;
                    if self.record_messages {
                        self.trace.push(Record::Send {
                            t: now,
                            msg_id,
                            from: node,
                            to,
                            at,
                            msg: msg.clone(),
                        });
                    }
                    self.schedule(
                        at,
                        Event::Deliver {
                            msg_id,
                            from: node,
                            to,
                            msg,
                        },
                    );
                }
                Action::SetTimer(timer) => {
                    let at = now + self.scenario.fast_timeout();
                    self.schedule(at, Event::Timer { node, timer });
                }
                Action::Decide(d) => {
                    self.trace.push(Record::decide(now, node, &d));
                    if d.repeat {
                        continue;
                    }
                    let r = &mut self.replicas[node.index()];
                    r.store.apply(&d.command.op);
                    r.watched.remove(&d.command.id);
                    self.client_followup(node, &d.command.id);
                }
                Action::Note(note) => self.trace.push(Record::Note { t: now, node, note }),
            }
        }
    }

    /// Closed-loop clients issue their next command once their previous one
    /// is decided at the node they talk to.
    fn client_followup(&mut self, node: NodeId, id: &CommandId) {
        if id.proposer != node || !self.client_commands.contains(id) {
            return;
        }
        let closed = self
            .workload
            .as_ref()
            .is_some_and(|g| matches!(g.config().mode, Mode::ClosedLoop));
        if closed {
            self.client_propose(node, self.now);
        }
    }
}

/// Convenience wrapper: builds and runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<SimOutcome, ConfigError> {
    Ok(Simulation::new(scenario)?.run())
}
