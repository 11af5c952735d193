//! Slow-decision fraction and latency as the conflict rate grows.
//!
//! cargo run --example sweep_conflicts

use caesar::experiment::workload::WorkloadConfig;
use caesar::experiment::{sweep, sweep_table, SweepParam};
use caesar::netsim::Scenario;

fn main() -> caesar::Result<()> {
    let mut base = Scenario::geo5();
    base.jitter = 5;
    base.workload = Some(WorkloadConfig {
        clients_per_node: 10,
        commands_total: 500,
        ..WorkloadConfig::default()
    });
    let values = [0.0, 2.0, 10.0, 30.0, 50.0, 100.0];
    let rows = sweep(&base, SweepParam::ConflictPercent, &values)?;
    print!("{}", sweep_table(SweepParam::ConflictPercent, &rows));

    // Same workload at 30% conflicts, fewer clients per node.
    let mut hot = base.clone();
    hot.workload.as_mut().unwrap().conflict_percent = 30;
    let rows = sweep(&hot, SweepParam::Clients, &[10.0, 5.0, 2.0, 1.0])?;
    println!();
    print!("{}", sweep_table(SweepParam::Clients, &rows));
    Ok(())
}
