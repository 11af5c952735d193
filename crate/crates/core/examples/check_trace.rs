//! Save a trace, load it back and run the checkers over it, then do the
//! same for a deliberately broken protocol variant.
//!
//! cargo run --example check_trace

use caesar::experiment::metrics::extract;
use caesar::experiment::run_experiment;
use caesar::netsim::{Scenario, Trace};
use caesar::verify::check_trace;

fn scenario(name: &str) -> caesar::Result<Scenario> {
    Scenario::load(format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR")))
}

fn main() -> caesar::Result<()> {
    let dir = std::env::temp_dir().join("caesar-check-trace");
    run_experiment(scenario("geo5.toml")?, Some(&dir))?;
    let path = dir.join("trace.jsonl");
    let trace = Trace::load(&path)?;
    println!("{}: {} records", path.display(), trace.records.len());
    print!("{}", check_trace(&trace)?);
    // Metrics come from the trace alone, so they can be rebuilt offline.
    let m = extract(&trace);
    println!("latency p50={} p99={} slow_fraction={:.3}", m.latency.p50, m.latency.p99, m.slow_fraction());

    println!("\n# replies no longer wait behind conflicting commands");
    let r = run_experiment(scenario("skip_wait_bug.toml")?, None)?;
    println!("violations={}", r.verdict.violations.len());
    for v in r.verdict.violations.iter().take(5) {
        println!("  {v}");
    }
    Ok(())
}
