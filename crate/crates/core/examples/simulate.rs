//! Run one scenario file through the simulator and print its metrics.
//!
//! cargo run --example simulate -- [scenario.toml]

use caesar::experiment::run_experiment;
use caesar::netsim::Scenario;

fn main() -> caesar::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/geo5.toml").to_string());
    let scenario = Scenario::load(&path)?;
    println!("# {} (n={}, seed={})", scenario.name, scenario.n, scenario.seed);
    let r = run_experiment(scenario, None)?;
    print!("{}", r.metrics);
    print!("{}", r.verdict);
    if !r.outcome.undecided.is_empty() {
        println!("undecided={}", r.outcome.undecided.len());
    }
    Ok(())
}
