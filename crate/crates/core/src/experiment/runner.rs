//! Runs scenarios end to end: simulate, check, extract metrics, write files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Result};
use crate::experiment::metrics::{extract, MetricsReport};
use crate::experiment::workload::WorkloadConfig;
use crate::netsim::{CrashSpec, Scenario, SimOutcome, Simulation};
use crate::verify::{check_trace, check_wait_graph, Report};

/// Command-line style tweaks applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tick_limit: Option<u64>,
    pub conflict_percent: Option<u8>,
    pub commands_total: Option<usize>,
    pub clients_per_node: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut s: Scenario) -> Result<Scenario> {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(t) = self.tick_limit {
            s.tick_limit = t;
        }
        if self.conflict_percent.is_some() || self.commands_total.is_some() || self.clients_per_node.is_some() {
            let w = s.workload.get_or_insert_with(WorkloadConfig::default);
            if let Some(c) = self.conflict_percent {
                w.conflict_percent = c;
            }
            if let Some(c) = self.commands_total {
                w.commands_total = c;
            }
            if let Some(c) = self.clients_per_node {
                w.clients_per_node = c;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub outcome: SimOutcome,
    pub metrics: MetricsReport,
    pub verdict: Report,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// Simulates a scenario, runs every checker and extracts metrics. With an
/// output directory, writes `trace.jsonl`, `metrics.txt` and `verify.txt`.
pub fn run_experiment(scenario: Scenario, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    let mut sim = Simulation::new(scenario.clone())?;
    while sim.step() {}
    // Deferred replies left at the end must still form an acyclic,
    // timestamp-ordered wait graph.
    let wait_violations: Vec<_> = (0..scenario.n as u32)
        .flat_map(|i| check_wait_graph(sim.node(crate::NodeId(i))))
        .collect();
    let outcome = sim.finish();
    let mut verdict = check_trace(&outcome.trace)?;
    verdict.violations.extend(wait_violations);
    let metrics = extract(&outcome.trace);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        outcome.trace.save(dir.join("trace.jsonl"))?;
        std::fs::write(dir.join("metrics.txt"), metrics.render())?;
        std::fs::write(dir.join("verify.txt"), verdict.to_string())?;
    }
    Ok(ExperimentResult {
        scenario,
        outcome,
        metrics,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    ConflictPercent,
    Clients,
    /// Crash this many nodes, highest ids first, at four round trips in.
    Crashes,
    /// Multiply every link delay.
    LatencyScale,
}

impl FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "conflict-percent" | "conflict_percent" | "conflictPercent" => Ok(Self::ConflictPercent),
            "clients" => Ok(Self::Clients),
            "crashes" => Ok(Self::Crashes),
            "latency-scale" | "latency_scale" | "latencyScale" => Ok(Self::LatencyScale),
            other => Err(ConfigError::Workload(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::ConflictPercent => "conflict_percent",
            Self::Clients => "clients",
            Self::Crashes => "crashes",
            Self::LatencyScale => "latency_scale",
        }
    }

    pub fn apply(self, mut s: Scenario, value: f64) -> Result<Scenario> {
        let whole = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(ConfigError::Workload(format!("{} needs a whole number, got {v}", self.name())).into())
            }
        };
        match self {
            Self::ConflictPercent => {
                let c = whole(value)?;
                if c > 100 {
                    return Err(ConfigError::Workload(format!("conflict_percent {c} exceeds 100")).into());
                }
                s.workload.get_or_insert_with(WorkloadConfig::default).conflict_percent = c as u8;
            }
            Self::Clients => {
                s.workload.get_or_insert_with(WorkloadConfig::default).clients_per_node = whole(value)? as usize;
            }
            Self::Crashes => {
                let k = whole(value)? as usize;
                if k > s.n {
                    return Err(ConfigError::NodeOutOfRange { node: k as u32, n: s.n }.into());
                }
                let at = 4 * s.max_round_trip();
                s.crashes = (0..k)
                    .map(|i| CrashSpec {
                        node: (s.n - 1 - i) as u32,
                        at,
                    })
                    .collect();
            }
            Self::LatencyScale => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(ConfigError::Workload(format!("latency scale must be positive, got {value}")).into());
                }
                for row in &mut s.latency {
                    for d in row.iter_mut() {
                        *d = (*d as f64 * value).round() as u64;
                    }
                }
                s.jitter = (s.jitter as f64 * value).round() as u64;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: MetricsReport,
    pub passed: bool,
    pub undecided: usize,
}

/// One run per value, in parallel; rows come back in input order.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    let scenarios = values
        .iter()
        .map(|v| param.apply(base.clone(), *v))
        .collect::<Result<Vec<_>>>()?;
    scenarios
        .into_par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| {
            let r = run_experiment(s, None)?;
            Ok(SweepRow {
                value: *v,
                passed: r.passed(),
                undecided: r.outcome.undecided.len(),
                metrics: r.metrics,
            })
        })
        .collect()
}

/// Delimited summary table, one row per sweep value.
pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{}|decided|fast|slow|slow_fraction|latency_mean|latency_p50|latency_p99|wait_mean|recoveries|undecided|checks\n",
        param.name()
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{}|{}|{}|{}|{:.4}|{:.3}|{}|{}|{:.3}|{}|{}|{}",
            r.value,
            m.decided,
            m.fast_decisions,
            m.slow_decisions,
            m.slow_fraction(),
            m.latency.mean,
            m.latency.p50,
            m.latency.p99,
            m.wait_time.mean,
            m.recovery_events,
            r.undecided,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    out
}
