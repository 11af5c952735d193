//! Consistency checkers and a bounded exhaustive explorer.

pub mod checks;
pub mod explore;

pub use checks::{
    check_prefix_equivalence, check_records, check_predecessor_inclusion, check_agreement, check_trace, check_wait_graph, Report,
    Violation,
};
pub use explore::{explore, Counterexample, ExploreConfig, ExploreReport, Step};
