//! Exhaustively explore three nodes and two conflicting commands, then
//! show that each seeded protocol bug is found.
//!
//! cargo run --release --example explore_small_model

use caesar::protocol::Mutations;
use caesar::verify::{explore, ExploreConfig};

fn main() -> Result<(), caesar::ConfigError> {
    let base = ExploreConfig::small();
    let clean = explore(base.clone())?;
    println!(
        "clean: states={} terminals={} violations={}",
        clean.states, clean.terminals, clean.violating_states
    );

    let bugs = [
        (
            "skip-wait",
            Mutations {
                skip_wait: true,
                ..Mutations::default()
            },
        ),
        (
            "fast-on-classic-quorum",
            Mutations {
                fast_on_classic_quorum: true,
                ..Mutations::default()
            },
        ),
        (
            "skip-whitelist",
            Mutations {
                skip_whitelist: true,
                ..Mutations::default()
            },
        ),
    ];
    for (name, mutations) in bugs {
        let r = explore(ExploreConfig {
            mutations,
            crash: true,
            ..base.clone()
        })?;
        println!("\n{name}: states={}", r.states);
        match r.counterexample {
            Some(cx) => {
                for v in &cx.violations {
                    println!("  violation: {v}");
                }
                for (i, step) in cx.path.iter().enumerate() {
                    println!("  {i:>2} {}", serde_json::to_string(step).expect("steps serialise"));
                }
            }
            None => println!("  no counterexample"),
        }
    }
    Ok(())
}
