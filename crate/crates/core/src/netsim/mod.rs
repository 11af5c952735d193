//! Deterministic discrete-event network simulator.
//!
//! Events are ordered by `(tick, sequence number)`, and every random choice
//! comes from a generator seeded by the scenario, so a scenario replays to
//! a byte-identical trace.

mod scenario;
mod sim;
pub mod trace;

pub use scenario::{ConflictRelation, CrashSpec, Scenario, ScriptedProposal};
pub use sim::{run, Replica, SimOutcome, Simulation};
pub use trace::{DecisionRecord, Record, Trace, Undecided};
