//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.
//!
//! Expected values come from oracles written here against the scenario
//! description (latency matrices, quorum sizes), never from the library's
//! own timing code.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use caesar::experiment::metrics::{extract, DecisionPath};
use caesar::experiment::run_experiment;
use caesar::experiment::workload::{Mode, WorkloadConfig};
use caesar::netsim::{CrashSpec, Record, Scenario, Simulation};
use caesar::protocol::{Mutations, Note};
use caesar::verify::{check_trace, check_wait_graph, explore, ExploreConfig, Violation};
use caesar::{NodeId, Status};

const STRESS_RUNS: u64 = 1_000;
const STRESS_BUDGET: Duration = Duration::from_secs(600);
const EXPLORE_BUDGET: Duration = Duration::from_secs(300);
const CONFLICTS: [u8; 6] = [0, 2, 10, 30, 50, 100];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// 1 and 8: randomized stress

#[derive(Default)]
struct Stress {
    runs: u64,
    decisions: usize,
    missing_pred: usize,
    divergent: usize,
    prefix: usize,
    wait_cycles: usize,
    wait_down: usize,
    /// Deferred replies still pending at live nodes when a run went quiet.
    lingering_waits: usize,
    undecided: usize,
    not_quiescent: u64,
    crashes: usize,
    elapsed: Duration,
}

fn stress_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4e5);
    let mut s = Scenario::geo5();
    s.name = format!("stress-{seed}");
    s.seed = seed;
    s.jitter = 10;
    s.workload = Some(WorkloadConfig {
        commands_total: 200,
        conflict_percent: CONFLICTS[(seed % CONFLICTS.len() as u64) as usize],
        clients_per_node: 2,
        ..WorkloadConfig::default()
    });
    let mut nodes: Vec<u32> = (0..5).collect();
    nodes.shuffle(&mut rng);
    let k = rng.gen_range(0..=2);
    s.crashes = nodes[..k]
        .iter()
        .map(|&node| CrashSpec {
            node,
            at: rng.gen_range(0..6_000),
        })
        .collect();
    s
}

fn stress_one(seed: u64) -> Stress {
    let s = stress_scenario(seed);
    let mut st = Stress {
        runs: 1,
        crashes: s.crashes.len(),
        ..Stress::default()
    };
    let mut sim = Simulation::new(s.clone()).unwrap().without_message_records();
    while sim.step() {}
    for i in 0..s.n as u32 {
        let node = NodeId(i);
        for v in check_wait_graph(sim.node(node)) {
            match v {
                Violation::WaitCycle { .. } => st.wait_cycles += 1,
                _ => st.wait_down += 1,
            }
        }
        if !sim.replica(node).crashed {
            st.lingering_waits += sim.node(node).pending_waits().len();
        }
    }
    let out = sim.finish();
    st.undecided = out.undecided.len();
    st.not_quiescent = u64::from(!out.quiescent);
    let report = check_trace(&out.trace).unwrap();
    st.decisions = report.decisions;
    for v in report.violations {
        match v {
            Violation::MissingPredecessor { .. } => st.missing_pred += 1,
            Violation::DivergentDecision { .. } => st.divergent += 1,
            Violation::OrderMismatch { .. } | Violation::TimestampOrder { .. } => st.prefix += 1,
            Violation::WaitCycle { .. } => st.wait_cycles += 1,
            Violation::WaitEdgeDown { .. } => st.wait_down += 1,
        }
    }
    st
}

fn stress() -> Stress {
    let start = Instant::now();
    let mut total = (0..STRESS_RUNS)
        .into_par_iter()
        .map(stress_one)
        .reduce(Stress::default, |a, b| Stress {
            runs: a.runs + b.runs,
            decisions: a.decisions + b.decisions,
            missing_pred: a.missing_pred + b.missing_pred,
            divergent: a.divergent + b.divergent,
            prefix: a.prefix + b.prefix,
            wait_cycles: a.wait_cycles + b.wait_cycles,
            wait_down: a.wait_down + b.wait_down,
            lingering_waits: a.lingering_waits + b.lingering_waits,
            undecided: a.undecided + b.undecided,
            not_quiescent: a.not_quiescent + b.not_quiescent,
            crashes: a.crashes + b.crashes,
            elapsed: Duration::ZERO,
        });
    total.elapsed = start.elapsed();
    total
}

fn criterion1(st: &Stress) -> Outcome {
    let safe = st.missing_pred == 0 && st.divergent == 0 && st.prefix == 0;
    outcome(
        st.runs == STRESS_RUNS && safe && st.elapsed < STRESS_BUDGET,
        format!(
            "runs={} decisions={} crashes={} missing_pred={} divergent={} prefix={} undecided={} elapsed={:.1}s (budget {}s)",
            st.runs,
            st.decisions,
            st.crashes,
            st.missing_pred,
            st.divergent,
            st.prefix,
            st.undecided,
            st.elapsed.as_secs_f64(),
            STRESS_BUDGET.as_secs()
        ),
    )
}

fn criterion8(st: &Stress) -> Outcome {
    outcome(
        st.runs == STRESS_RUNS && st.wait_cycles == 0 && st.wait_down == 0,
        format!(
            "runs={} wait_cycles={} downward_wait_edges={} waits_left_at_quiescence={} non_quiescent_runs={}",
            st.runs, st.wait_cycles, st.wait_down, st.lingering_waits, st.not_quiescent
        ),
    )
}

// ---------------------------------------------------------------------------
// 2: fast path takes one round trip to the fast-quorum-th closest node

/// Leader-side fast decision latency: the fq-th smallest round trip from
/// the leader, counting itself, plus delivering Stable to itself.
fn fast_oracle(s: &Scenario, leader: usize) -> u64 {
    let n = s.n;
    let fq = (3 * n).div_ceil(4);
    let mut rtts: Vec<u64> = (0..n)
        .map(|j| {
            if j == leader {
                2 * s.self_delay
            } else {
                s.latency[leader][j] + s.latency[j][leader]
            }
        })
        .collect();
    rtts.sort_unstable();
    rtts[fq - 1] + s.self_delay
}

fn fast_path_case(mut s: Scenario) -> Result<usize, String> {
    s.jitter = 0;
    s.crashes.clear();
    s.workload = Some(WorkloadConfig {
        commands_total: 200,
        conflict_percent: 0,
        clients_per_node: 2,
        ..WorkloadConfig::default()
    });
    let name = s.name.clone();
    let r = run_experiment(s.clone(), None).map_err(|e| e.to_string())?;
    if !r.passed() || !r.outcome.undecided.is_empty() || r.metrics.decided != 200 {
        return Err(format!("{name}: run not clean: {}", r.verdict));
    }
    for m in &r.metrics.commands {
        let leader = m.id.proposer.index();
        let want = m.proposed_at + fast_oracle(&s, leader);
        if m.path != Some(DecisionPath::Fast) || m.decided_at != Some(want) {
            return Err(format!(
                "{name}: {} path {:?} decided {:?}, expected fast at {want}",
                m.id, m.path, m.decided_at
            ));
        }
    }
    Ok(r.metrics.commands.len())
}

fn criterion2() -> Outcome {
    let mut asym = Scenario::uniform(5, 0);
    asym.name = "asymmetric5".into();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (i, row) in asym.latency.iter_mut().enumerate() {
        for (j, d) in row.iter_mut().enumerate() {
            *d = if i == j { 0 } else { rng.gen_range(3..80) };
        }
    }
    let mut seven = Scenario::uniform(7, 13);
    seven.self_delay = 1;
    let cases = [Scenario::geo5(), asym, seven];
    let mut checked = 0;
    for s in cases {
        match fast_path_case(s) {
            Ok(k) => checked += k,
            Err(e) => return outcome(false, e),
        }
    }
    outcome(
        true,
        format!("{checked} commands on geo5, an asymmetric 5-node matrix and uniform n=7 all fast at the oracle tick"),
    )
}

// ---------------------------------------------------------------------------
// 3: a forced rejection costs exactly four one-way delays

/// Uniform delay `d`. p4 proposes c̄ at 0 and decides it at 2d with the
/// fast quorum p1..p4; its messages to p0 take 3.5d. p0 proposes c at 3d
/// with a timestamp below c̄'s, every other node rejects it, and the retry
/// decides it at 3d + 4d.
fn forced_rejection(d: u64) -> Result<(), String> {
    assert!(d % 2 == 0);
    let mut s = Scenario::uniform(5, d);
    s.latency[4][0] = 7 * d / 2;
    let mut sim = Simulation::new(s).map_err(|e| e.to_string())?;
    sim.propose_at(0, NodeId(4), "k", b"first");
    let c = sim.propose_at(3 * d, NodeId(0), "k", b"second");
    let out = sim.run();
    let report = check_trace(&out.trace).map_err(|e| e.to_string())?;
    if !report.passed() || !out.undecided.is_empty() {
        return Err(format!("d={d}: run not clean: {report}"));
    }
    let decided = out.trace.records.iter().find_map(|r| match r {
        Record::Decide { t, node, id, .. } if *node == NodeId(0) && *id == c => Some(*t),
        _ => None,
    });
    let rejected = out
        .trace
        .records
        .iter()
        .any(|r| matches!(r, Record::Note { note: Note::Rejected { id, .. }, .. } if *id == c));
    let m = extract(&out.trace);
    let path = m.commands.iter().find(|x| x.id == c).and_then(|x| x.path);
    let want = 3 * d + 4 * d;
    if decided != Some(want) || !rejected || path != Some(DecisionPath::Slow) {
        return Err(format!(
            "d={d}: decided {decided:?} (want {want}), rejected={rejected}, path={path:?}"
        ));
    }
    Ok(())
}

fn criterion3() -> Outcome {
    let ds = [10, 20, 40];
    for d in ds {
        if let Err(e) = forced_rejection(d) {
            return outcome(false, e);
        }
    }
    outcome(true, format!("rejected then retried command decided at propose + 4d for d in {ds:?}"))
}

// ---------------------------------------------------------------------------
// 4: slow decisions stay below the conflict rate and fall with concurrency

const TREND_SEEDS: u64 = 4;

fn slow_fraction(conflict: u8, clients: usize) -> Result<f64, String> {
    let runs: Vec<_> = (0..TREND_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut s = Scenario::geo5();
            s.seed = seed;
            s.jitter = 5;
            s.workload = Some(WorkloadConfig {
                commands_total: 500,
                conflict_percent: conflict,
                clients_per_node: clients,
                shared_pool_size: 1,
                mode: Mode::ClosedLoop,
                ..WorkloadConfig::default()
            });
            run_experiment(s, None)
        })
        .collect();
    let (mut slow, mut decided) = (0, 0);
    for r in runs {
        let r = r.map_err(|e| e.to_string())?;
        if !r.passed() || !r.outcome.undecided.is_empty() {
            return Err(format!("conflict {conflict}, clients {clients}: run not clean"));
        }
        slow += r.metrics.slow_decisions;
        decided += r.metrics.decided;
    }
    Ok(slow as f64 / decided as f64)
}

fn criterion4() -> Outcome {
    let run = || -> Result<(bool, String), String> {
        let mut ok = true;
        let mut detail = Vec::new();
        let zero = slow_fraction(0, 10)?;
        ok &= zero == 0.0;
        detail.push(format!("c0={zero:.3}"));
        for c in [10u8, 30, 50] {
            let f = slow_fraction(c, 10)?;
            ok &= f < f64::from(c) / 100.0;
            detail.push(format!("c{c}={f:.3}"));
        }
        // Fewer clients per node, fewer concurrent proposals.
        let trend = [10usize, 5, 2, 1]
            .iter()
            .map(|&k| slow_fraction(30, k))
            .collect::<Result<Vec<_>, _>>()?;
        ok &= trend.windows(2).all(|w| w[1] < w[0]);
        let t: Vec<String> = trend.iter().map(|f| format!("{f:.3}")).collect();
        detail.push(format!("c30 by clients/node 10,5,2,1 = {}", t.join(" > ")));
        Ok((ok, detail.join(" ")))
    };
    match run() {
        Ok((ok, d)) => outcome(ok, d),
        Err(e) => outcome(false, e),
    }
}

// ---------------------------------------------------------------------------
// 5: leader crash with the command in each status

fn criterion5() -> Outcome {
    let statuses = [
        Status::FastPending,
        Status::SlowPending,
        Status::Accepted,
        Status::Rejected,
        Status::Stable,
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for st in statuses {
        let r = common::recovery_scenario(st);
        let parked = r.at_crash.iter().any(|s| *s == Some(st));
        let res = r.verdict();
        ok &= parked && res.is_ok();
        detail.push(format!(
            "{}:{}{}",
            st.as_str(),
            if parked && res.is_ok() { "ok" } else { "FAILED" },
            if r.before.is_some() { "(matches pre-crash)" } else { "" }
        ));
        if let Err(e) = res {
            detail.push(e);
        }
    }
    outcome(ok, detail.join(" "))
}

// ---------------------------------------------------------------------------
// 6: exhaustive small model

fn criterion6() -> Outcome {
    let base = ExploreConfig::small();
    let mutation = |m: Mutations| ExploreConfig {
        mutations: m,
        crash: true,
        ..base.clone()
    };
    let runs = vec![
        ("clean", base.clone(), false),
        ("clean+crash", ExploreConfig { crash: true, ..base.clone() }, false),
        // Breaking the wait condition shows up without any failure.
        (
            "skip-wait",
            ExploreConfig {
                mutations: Mutations {
                    skip_wait: true,
                    ..Mutations::default()
                },
                ..base.clone()
            },
            true,
        ),
        (
            "fast-on-classic-quorum",
            mutation(Mutations {
                fast_on_classic_quorum: true,
                ..Mutations::default()
            }),
            true,
        ),
        (
            "skip-whitelist",
            mutation(Mutations {
                skip_whitelist: true,
                ..Mutations::default()
            }),
            true,
        ),
    ];
    let start = Instant::now();
    let results: Vec<_> = runs
        .into_par_iter()
        .map(|(name, cfg, expect_cx)| (name, expect_cx, explore(cfg).unwrap()))
        .collect();
    let elapsed = start.elapsed();
    let mut ok = elapsed < EXPLORE_BUDGET;
    let mut detail = Vec::new();
    for (name, expect_cx, r) in results {
        let good = if expect_cx {
            r.counterexample.is_some()
        } else {
            r.passed() && !r.truncated
        };
        ok &= good;
        detail.push(format!(
            "{name}: states={} violating={}{}",
            r.states,
            r.violating_states,
            if good { "" } else { " UNEXPECTED" }
        ));
    }
    detail.push(format!(
        "elapsed={:.1}s (budget {}s)",
        elapsed.as_secs_f64(),
        EXPLORE_BUDGET.as_secs()
    ));
    outcome(ok, detail.join("; "))
}

// ---------------------------------------------------------------------------
// 7: determinism

fn criterion7() -> Outcome {
    let mut with_crash = stress_scenario(17);
    with_crash.crashes = vec![CrashSpec { node: 1, at: 900 }];
    let mut open = Scenario::geo5();
    open.seed = 99;
    open.jitter = 12;
    open.workload = Some(WorkloadConfig {
        commands_total: 150,
        conflict_percent: 50,
        mode: Mode::OpenLoop { mean_interarrival: 8.0 },
        ..WorkloadConfig::default()
    });
    let cases = [with_crash, open, stress_scenario(4)];
    let dir = tempfile::tempdir().unwrap();
    for (i, s) in cases.into_iter().enumerate() {
        let mut files = Vec::new();
        for attempt in 0..2 {
            let out = dir.path().join(format!("{i}-{attempt}"));
            run_experiment(s.clone(), Some(&out)).unwrap();
            let read = |f: &str| std::fs::read(out.join(f)).unwrap();
            files.push((read("trace.jsonl"), read("metrics.txt"), read("verify.txt")));
        }
        if files[0] != files[1] {
            return outcome(false, format!("{} differs between runs", s.name));
        }
    }
    outcome(true, "3 scenarios: trace.jsonl, metrics.txt and verify.txt byte-identical across re-runs")
}

fn main() -> ExitCode {
    let start = Instant::now();
    let (stress, rest) = rayon::join(stress, || {
        let mut v: BTreeMap<u32, Outcome> = BTreeMap::new();
        v.insert(2, criterion2());
        v.insert(3, criterion3());
        v.insert(5, criterion5());
        v.insert(7, criterion7());
        v.insert(4, criterion4());
        v.insert(6, criterion6());
        v
    });
    let mut all = rest;
    all.insert(1, criterion1(&stress));
    all.insert(8, criterion8(&stress));
    let names: BTreeMap<u32, &str> = [
        (1, "safety under randomized stress"),
        (2, "fast-path latency exactness"),
        (3, "slow-path latency exactness"),
        (4, "fast-decision dominance trend"),
        (5, "recovery safety per status"),
        (6, "exhaustive small model"),
        (7, "determinism"),
        (8, "no wait-graph deadlock"),
    ]
    .into();
    let mut failed = 0;
    for (k, o) in &all {
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {k} {}: {} ({})",
            names[k],
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        all.len() - failed,
        all.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
