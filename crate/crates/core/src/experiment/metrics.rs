//! Metrics extracted from a trace.
//!
//! Extraction reads nothing but the trace records, so re-extracting from a
//! saved trace reproduces the report exactly.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::command::{CommandId, NodeId};
use crate::history::Ballot;
use crate::netsim::{Record, Trace};
use crate::protocol::{Note, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionPath {
    /// Stable was first issued by a fast decision.
    Fast,
    /// Stable was first issued after a slow proposal, a retry or a recovery.
    Slow,
}

/// Leader-side phases a command's latency is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseName {
    FastPropose,
    SlowPropose,
    Retry,
    /// From issuing Stable to delivering the command locally.
    Deliver,
}

impl PhaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseName::FastPropose => "fast_propose",
            PhaseName::SlowPropose => "slow_propose",
            PhaseName::Retry => "retry",
            PhaseName::Deliver => "deliver",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandMetrics {
    pub id: CommandId,
    pub proposed_at: u64,
    /// Decision tick at the proposer, or the earliest decision anywhere if
    /// the proposer never decided it.
    pub decided_at: Option<u64>,
    pub path: Option<DecisionPath>,
    pub phases: Vec<(PhaseName, u64)>,
}

impl CommandMetrics {
    pub fn latency(&self) -> Option<u64> {
        self.decided_at.map(|d| d - self.proposed_at)
    }
}

/// Order statistics of a sample, nearest-rank percentiles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
    /// Counts per power-of-two bucket: entry `i` holds samples in
    /// `[2^(i-1), 2^i)`, entry 0 holds zeros.
    pub buckets: Vec<u64>,
}

impl Summary {
    pub fn of(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |p: f64| {
            let k = ((p * s.len() as f64).ceil() as usize).clamp(1, s.len());
            s[k - 1]
        };
        let mut buckets = Vec::new();
        for &x in &s {
            let b = (u64::BITS - x.leading_zeros()) as usize;
            if buckets.len() <= b {
                buckets.resize(b + 1, 0);
            }
            buckets[b] += 1;
        }
        Self {
            count: s.len(),
            mean: s.iter().sum::<u64>() as f64 / s.len() as f64,
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: *s.last().expect("non-empty"),
            buckets,
        }
    }

    fn write_kv(&self, out: &mut String, prefix: &str) {
        let _ = writeln!(out, "{prefix}.count={}", self.count);
        let _ = writeln!(out, "{prefix}.mean={:.3}", self.mean);
        let _ = writeln!(out, "{prefix}.p50={}", self.p50);
        let _ = writeln!(out, "{prefix}.p90={}", self.p90);
        let _ = writeln!(out, "{prefix}.p99={}", self.p99);
        let _ = writeln!(out, "{prefix}.max={}", self.max);
        let hist: Vec<String> = self.buckets.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "{prefix}.log2_hist={}", hist.join(","));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub proposed: usize,
    pub decided: usize,
    pub fast_decisions: usize,
    pub slow_decisions: usize,
    pub recovery_events: usize,
    pub latency: Summary,
    pub phase_latency: BTreeMap<PhaseName, Summary>,
    pub wait_time: Summary,
    pub node_latency: BTreeMap<NodeId, Summary>,
    pub end_tick: u64,
    pub commands: Vec<CommandMetrics>,
}

impl MetricsReport {
    pub fn slow_fraction(&self) -> f64 {
        if self.decided == 0 {
            0.0
        } else {
            self.slow_decisions as f64 / self.decided as f64
        }
    }

    /// Line-delimited `key=value` records followed by a per-node table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario={}", self.scenario);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "end_tick={}", self.end_tick);
        let _ = writeln!(out, "proposed={}", self.proposed);
        let _ = writeln!(out, "decided={}", self.decided);
        let _ = writeln!(out, "fast_decisions={}", self.fast_decisions);
        let _ = writeln!(out, "slow_decisions={}", self.slow_decisions);
        let _ = writeln!(out, "slow_fraction={:.4}", self.slow_fraction());
        let _ = writeln!(out, "recovery_events={}", self.recovery_events);
        self.latency.write_kv(&mut out, "latency");
        for (phase, s) in &self.phase_latency {
            s.write_kv(&mut out, &format!("phase.{}", phase.as_str()));
        }
        self.wait_time.write_kv(&mut out, "wait");
        out.push_str("# node|commands|mean|p50|p90|p99|max\n");
        for (node, s) in &self.node_latency {
            let _ = writeln!(
                out,
                "{}|{}|{:.3}|{}|{}|{}|{}",
                node.0, s.count, s.mean, s.p50, s.p90, s.p99, s.max
            );
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Default)]
struct Timeline {
    proposer: Option<NodeId>,
    proposed_at: Option<u64>,
    proposer_decide: Option<u64>,
    first_decide: Option<u64>,
    path: Option<DecisionPath>,
    /// Transitions at the node and ballot that first issued Stable.
    transitions: Vec<(u64, NodeId, Ballot, Transition)>,
}

pub fn extract(trace: &Trace) -> MetricsReport {
    let mut report = MetricsReport::default();
    if let Some(s) = trace.scenario() {
        report.scenario = s.name.clone();
        report.seed = s.seed;
    }
    let mut lines: BTreeMap<CommandId, Timeline> = BTreeMap::new();
    let mut waits_open: BTreeMap<(NodeId, CommandId, Ballot), u64> = BTreeMap::new();
    let mut waits = Vec::new();
    for r in &trace.records {
        match r {
            Record::Propose { t, node, cmd } => {
                let l = lines.entry(cmd.id).or_default();
                if l.proposed_at.is_none() {
                    l.proposed_at = Some(*t);
                    l.proposer = Some(*node);
                }
            }
            Record::Decide {
                t,
                node,
                id,
                repeat: false,
                ..
            } => {
                let l = lines.entry(*id).or_default();
                l.first_decide.get_or_insert(*t);
                if l.proposer == Some(*node) {
                    l.proposer_decide.get_or_insert(*t);
                }
            }
            Record::Note { t, node, note } => match note {
                Note::Transition { id, ballot, kind, .. } => {
                    let l = lines.entry(*id).or_default();
                    l.transitions.push((*t, *node, *ballot, *kind));
                    if kind.issues_stable() && l.path.is_none() {
                        l.path = Some(if *kind == Transition::FastDecision {
                            DecisionPath::Fast
                        } else {
                            DecisionPath::Slow
                        });
                    }
                }
                Note::WaitStarted { id, ballot, .. } => {
                    waits_open.entry((*node, *id, *ballot)).or_insert(*t);
                }
                Note::WaitEnded { id, ballot, .. } => {
                    if let Some(start) = waits_open.remove(&(*node, *id, *ballot)) {
                        waits.push(t - start);
                    }
                }
                Note::RecoveryStarted { .. } => report.recovery_events += 1,
                _ => {}
            },
            Record::End { t, .. } => report.end_tick = *t,
            _ => {}
        }
    }

    let mut latencies = Vec::new();
    let mut per_node: BTreeMap<NodeId, Vec<u64>> = BTreeMap::new();
    let mut per_phase: BTreeMap<PhaseName, Vec<u64>> = BTreeMap::new();
    for (id, l) in lines {
        let Some(proposed_at) = l.proposed_at else {
            continue;
        };
        report.proposed += 1;
        let decided_at = l.proposer_decide.or(l.first_decide);
        if decided_at.is_some() {
            report.decided += 1;
            match l.path {
                Some(DecisionPath::Fast) => report.fast_decisions += 1,
                // A decision whose stable phase left no note still counts,
                // so that fast + slow always equals decided.
                _ => report.slow_decisions += 1,
            }
        }
        let phases = phases_of(&l, proposed_at);
        for (p, d) in &phases {
            per_phase.entry(*p).or_default().push(*d);
        }
        let m = CommandMetrics {
            id,
            proposed_at,
            decided_at,
            path: decided_at.and(l.path),
            phases,
        };
        if let Some(lat) = m.latency() {
            latencies.push(lat);
            if let Some(p) = l.proposer {
                per_node.entry(p).or_default().push(lat);
            }
        }
        report.commands.push(m);
    }
    report.latency = Summary::of(&latencies);
    report.wait_time = Summary::of(&waits);
    report.phase_latency = per_phase.into_iter().map(|(p, v)| (p, Summary::of(&v))).collect();
    report.node_latency = per_node.into_iter().map(|(n, v)| (n, Summary::of(&v))).collect();
    report
}

/// Splits the proposer's own path into phases. Commands taken over by a
/// recoverer are left without a breakdown.
fn phases_of(l: &Timeline, proposed_at: u64) -> Vec<(PhaseName, u64)> {
    let Some(leader) = l.proposer else {
        return Vec::new();
    };
    let mine: Vec<_> = l
        .transitions
        .iter()
        .filter(|(_, n, b, _)| *n == leader && *b == 0)
        .collect();
    let Some(last) = mine.iter().position(|(_, _, _, k)| k.issues_stable()) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut phase = PhaseName::FastPropose;
    let mut start = proposed_at;
    for (t, _, _, kind) in &mine[..=last] {
        out.push((phase, t - start));
        start = *t;
        phase = match kind {
            Transition::FastToSlowProposal => PhaseName::SlowPropose,
            Transition::FastToRetry | Transition::SlowToRetry => PhaseName::Retry,
            _ => PhaseName::Deliver,
        };
    }
    if let Some(d) = l.proposer_decide {
        out.push((PhaseName::Deliver, d.saturating_sub(start)));
    }
    out
}
