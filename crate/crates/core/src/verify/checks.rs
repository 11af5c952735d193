//! Consistency oracles over decision records and decision logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandId, NodeId};
use crate::error::Result;
use crate::history::{Ballot, PredSet};
use crate::netsim::{DecisionRecord, Trace};
use crate::protocol::NodeState;
use crate::rsm::ConflictFn;
use crate::timestamp::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum Violation {
    /// Conflicting commands where the one with the smaller timestamp is not
    /// a predecessor of the other.
    MissingPredecessor {
        earlier: CommandId,
        earlier_ts: Timestamp,
        later: CommandId,
        later_ts: Timestamp,
    },
    /// Two decisions of one command disagree on timestamp or predecessors.
    DivergentDecision {
        id: CommandId,
        first: (NodeId, Ballot, Timestamp),
        other: (NodeId, Ballot, Timestamp),
        pred_differs: bool,
    },
    /// Two nodes decided a conflicting pair in opposite orders.
    OrderMismatch {
        a: CommandId,
        b: CommandId,
        node_ab: NodeId,
        node_ba: NodeId,
    },
    /// A node decided a conflicting pair against timestamp order.
    TimestampOrder {
        node: NodeId,
        first: CommandId,
        second: CommandId,
    },
    /// A deferred reply waits, directly or transitively, on itself.
    WaitCycle { node: NodeId, cycle: Vec<CommandId> },
    /// A deferred reply waits on a command with a smaller timestamp.
    WaitEdgeDown {
        node: NodeId,
        waiter: CommandId,
        blocker: CommandId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingPredecessor {
                earlier,
                earlier_ts,
                later,
                later_ts,
            } => write!(
                f,
                "missing predecessor: {earlier} at {earlier_ts} not in pred of {later} at {later_ts}"
            ),
            Violation::DivergentDecision {
                id,
                first,
                other,
                pred_differs,
            } => write!(
                f,
                "divergent decision for {id}: {} b={} ts={} vs {} b={} ts={}{}",
                first.0,
                first.1,
                first.2,
                other.0,
                other.1,
                other.2,
                if *pred_differs { " (pred differs)" } else { "" }
            ),
            Violation::OrderMismatch { a, b, node_ab, node_ba } => {
                write!(f, "order mismatch: {node_ab} decided {a} before {b}, {node_ba} the reverse")
            }
            Violation::TimestampOrder { node, first, second } => {
                write!(f, "{node} decided {first} before {second} against timestamp order")
            }
            Violation::WaitCycle { node, cycle } => {
                let ids: Vec<String> = cycle.iter().map(ToString::to_string).collect();
                write!(f, "wait cycle on {node}: {}", ids.join(" -> "))
            }
            Violation::WaitEdgeDown { node, waiter, blocker } => {
                write!(f, "{node}: {waiter} waits on lower-timestamp {blocker}")
            }
        }
    }
}

/// Outcome of running the checkers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub decisions: usize,
    pub commands: usize,
    pub violations: Vec<Violation>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: Report) {
        self.decisions += other.decisions;
        self.commands = self.commands.max(other.commands);
        self.violations.extend(other.violations);
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "decisions={}", self.decisions)?;
        writeln!(f, "commands={}", self.commands)?;
        writeln!(f, "violations={}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

/// Distinct decided values per command, with one witness each.
fn values(records: &[DecisionRecord]) -> BTreeMap<CommandId, (Command, Vec<(Timestamp, PredSet)>)> {
    let mut out: BTreeMap<CommandId, (Command, Vec<(Timestamp, PredSet)>)> = BTreeMap::new();
    for r in records {
        let slot = out
            .entry(r.command.id)
            .or_insert_with(|| (r.command.clone(), Vec::new()));
        let v = (r.ts, r.pred.clone());
        if !slot.1.contains(&v) {
            slot.1.push(v);
        }
    }
    out
}

/// For decided conflicting `c̄`, `c` with `ts(c̄) < ts(c)`, requires
/// `c̄ ∈ pred(c)`, using the predecessor set carried by the decision.
pub fn check_predecessor_inclusion(records: &[DecisionRecord], conflict: ConflictFn) -> Vec<Violation> {
    let vals = values(records);
    let flat: Vec<(&Command, Timestamp, &PredSet)> = vals
        .values()
        .flat_map(|(c, vs)| vs.iter().map(move |(ts, p)| (c, *ts, p)))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (c, ts, pred) in &flat {
        for (cbar, tsbar, _) in &flat {
            if c.id == cbar.id || !conflict(&c.op, &cbar.op) || tsbar >= ts {
                continue;
            }
            if !pred.contains(&cbar.id) && seen.insert((cbar.id, c.id)) {
                out.push(Violation::MissingPredecessor {
                    earlier: cbar.id,
                    earlier_ts: *tsbar,
                    later: c.id,
                    later_ts: *ts,
                });
            }
        }
    }
    out
}

/// Every decision of a command at a ballot at or above its first decided
/// ballot carries the same timestamp and predecessors.
pub fn check_agreement(records: &[DecisionRecord]) -> Vec<Violation> {
    let mut by_cmd: BTreeMap<CommandId, Vec<&DecisionRecord>> = BTreeMap::new();
    for r in records {
        by_cmd.entry(r.command.id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (id, rs) in by_cmd {
        let first = rs
            .iter()
            .min_by_key(|r| (r.ballot, r.tick, r.node))
            .expect("non-empty group");
        for r in &rs {
            if r.ballot >= first.ballot && (r.ts != first.ts || r.pred != first.pred) {
                out.push(Violation::DivergentDecision {
                    id,
                    first: (first.node, first.ballot, first.ts),
                    other: (r.node, r.ballot, r.ts),
                    pred_differs: r.pred != first.pred,
                });
            }
        }
    }
    out
}

/// Conflicting commands decided by two nodes appear in the same relative
/// order on both, and in timestamp order on each.
pub fn check_prefix_equivalence(
    logs: &BTreeMap<NodeId, Vec<CommandId>>,
    commands: &BTreeMap<CommandId, Command>,
    timestamps: &BTreeMap<CommandId, Timestamp>,
    conflict: ConflictFn,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let positions: BTreeMap<NodeId, BTreeMap<CommandId, usize>> = logs
        .iter()
        .map(|(n, log)| (*n, log.iter().enumerate().map(|(i, c)| (*c, i)).collect()))
        .collect();
    for (node, log) in logs {
        for (i, a) in log.iter().enumerate() {
            for b in &log[i + 1..] {
                let (Some(ca), Some(cb)) = (commands.get(a), commands.get(b)) else {
                    continue;
                };
                if !conflict(&ca.op, &cb.op) {
                    continue;
                }
                if let (Some(ta), Some(tb)) = (timestamps.get(a), timestamps.get(b)) {
                    if ta > tb {
                        out.push(Violation::TimestampOrder {
                            node: *node,
                            first: *a,
                            second: *b,
                        });
                    }
                }
                for (other, pos) in &positions {
                    if other <= node {
                        continue;
                    }
                    if let (Some(pa), Some(pb)) = (pos.get(a), pos.get(b)) {
                        if pa > pb {
                            out.push(Violation::OrderMismatch {
                                a: *a,
                                b: *b,
                                node_ab: *node,
                                node_ba: *other,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Deferred replies must only wait on higher-timestamp commands, so the
/// wait graph is acyclic.
pub fn check_wait_graph(node: &NodeState) -> Vec<Violation> {
    let me = node.id();
    let ts_of = |id: &CommandId| node.history().get(id).map(|e| e.ts);
    let mut out = Vec::new();
    let edges: BTreeMap<CommandId, Vec<CommandId>> = node
        .pending_waits()
        .iter()
        .map(|(id, w)| (*id, w.blockers.iter().copied().collect()))
        .collect();
    for (waiter, blockers) in &edges {
        for b in blockers {
            if let (Some(tw), Some(tb)) = (ts_of(waiter), ts_of(b)) {
                if tb <= tw {
                    out.push(Violation::WaitEdgeDown {
                        node: me,
                        waiter: *waiter,
                        blocker: *b,
                    });
                }
            }
        }
    }
    // Iterative DFS with colors: 0 white, 1 on stack, 2 done.
    let mut color: BTreeMap<CommandId, u8> = BTreeMap::new();
    for start in edges.keys() {
        if color.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(CommandId, usize)> = vec![(*start, 0)];
        color.insert(*start, 1);
        while let Some((v, i)) = stack.pop() {
            let next = edges.get(&v).and_then(|bs| bs.get(i)).copied();
            match next {
                None => {
                    color.insert(v, 2);
                }
                Some(w) => {
                    stack.push((v, i + 1));
                    match color.get(&w).copied().unwrap_or(0) {
                        0 => {
                            color.insert(w, 1);
                            stack.push((w, 0));
                        }
                        1 => {
                            let from = stack.iter().position(|(x, _)| *x == w).expect("on stack");
                            let cycle = stack[from..].iter().map(|(x, _)| *x).collect();
                            out.push(Violation::WaitCycle { node: me, cycle });
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    out
}

/// Runs the predecessor, agreement and prefix-equivalence checks over a trace.
pub fn check_trace(trace: &Trace) -> Result<Report> {
    let conflict = trace
        .scenario()
        .map(|s| s.conflict.function())
        .unwrap_or(crate::rsm::conflicts);
    let records = trace.decisions()?;
    let commands = trace.commands();
    Ok(check_records(&records, &trace.logs(), &commands, conflict))
}

pub fn check_records(
    records: &[DecisionRecord],
    logs: &BTreeMap<NodeId, Vec<CommandId>>,
    commands: &BTreeMap<CommandId, Command>,
    conflict: ConflictFn,
) -> Report {
    let mut violations = check_predecessor_inclusion(records, conflict);
    violations.extend(check_agreement(records));
    // Timestamp order is checked against the first decided value; the
    // agreement check already flags commands with more than one.
    let mut timestamps = BTreeMap::new();
    for r in records {
        timestamps.entry(r.command.id).or_insert(r.ts);
    }
    violations.extend(check_prefix_equivalence(logs, commands, &timestamps, conflict));
    let decided: BTreeSet<CommandId> = records.iter().map(|r| r.command.id).collect();
    Report {
        decisions: records.len(),
        commands: decided.len(),
        violations,
    }
}
