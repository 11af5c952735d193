//! Every replica applies its decided commands to a key-value store; the
//! stores of surviving replicas end up identical.
//!
//! cargo run --example kv_replicas

use caesar::experiment::workload::WorkloadConfig;
use caesar::netsim::{CrashSpec, Scenario, Simulation};
use caesar::NodeId;

fn main() {
    let mut s = Scenario::geo5();
    s.seed = 42;
    s.jitter = 8;
    s.crashes = vec![CrashSpec { node: 2, at: 1_000 }];
    s.workload = Some(WorkloadConfig {
        clients_per_node: 4,
        commands_total: 300,
        conflict_percent: 40,
        shared_pool_size: 3,
        ..WorkloadConfig::default()
    });
    let mut sim = Simulation::new(s).expect("valid scenario");
    while sim.step() {}
    let reference = sim.replica(NodeId(0)).store.clone();
    for i in 0..5 {
        let r = sim.replica(NodeId(i));
        let state = if r.crashed { "crashed" } else { "live" };
        println!(
            "p{i} ({state}): {} keys, {} decided, same as p0: {}",
            r.store.len(),
            r.state.decided().len(),
            r.store == reference
        );
    }
    for key in ["s00000", "s00001", "s00002"] {
        println!("{key} = {:?}", reference.read(key).map(String::from_utf8_lossy));
    }
}
