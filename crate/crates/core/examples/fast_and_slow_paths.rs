//! Decision latency of a lone command (two one-way delays) against one
//! that is rejected and retried (four one-way delays).
//!
//! cargo run --example fast_and_slow_paths

use caesar::netsim::{Record, Scenario, Simulation};
use caesar::{CommandId, NodeId};

const DELAY: u64 = 10;

fn decided_at(records: &[Record], node: NodeId, id: CommandId) -> Option<u64> {
    records.iter().find_map(|r| match r {
        Record::Decide { t, node: n, id: d, .. } if *n == node && *d == id => Some(*t),
        _ => None,
    })
}

fn main() {
    let mut sim = Simulation::new(Scenario::uniform(5, DELAY)).expect("valid scenario");
    let c = sim.propose_at(0, NodeId(0), "k", b"v");
    let out = sim.run();
    println!("fast: proposed at 0, decided at {:?}", decided_at(&out.trace.records, NodeId(0), c));

    // p4's command reaches p0 late, so p0 proposes below it and is rejected.
    let mut s = Scenario::uniform(5, DELAY);
    s.latency[4][0] = 7 * DELAY / 2;
    let mut sim = Simulation::new(s).expect("valid scenario");
    sim.propose_at(0, NodeId(4), "k", b"first");
    let c = sim.propose_at(3 * DELAY, NodeId(0), "k", b"second");
    let out = sim.run();
    println!(
        "retry: proposed at {}, decided at {:?}",
        3 * DELAY,
        decided_at(&out.trace.records, NodeId(0), c)
    );
}
