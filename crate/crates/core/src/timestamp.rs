//! Logical timestamps and the per-node clock that issues them.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::command::NodeId;

/// A `⟨counter, owner⟩` pair. Pairs are ordered by counter first and owner
/// second, so timestamps issued by distinct nodes never compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub counter: u64,
    pub owner: NodeId,
}

impl Timestamp {
    pub const fn new(counter: u64, owner: NodeId) -> Self {
        Self { counter, owner }
    }

    /// Strict total-order comparison.
    pub fn less_than(&self, other: &Timestamp) -> bool {
        self.counter < other.counter || (self.counter == other.counter && self.owner < other.owner)
    }
}

/// Free-function form of [`Timestamp::less_than`].
pub fn timestamp_less(a: Timestamp, b: Timestamp) -> bool {
    a.less_than(&b)
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.counter
            .cmp(&other.counter)
            .then_with(|| self.owner.cmp(&other.owner))
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.counter, self.owner.0)
    }
}

/// Per-node logical clock. `current` is the next value this node will hand
/// out; it always stays above every timestamp the node has emitted or seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogicalClock {
    current: Timestamp,
}

impl LogicalClock {
    pub fn new(owner: NodeId) -> Self {
        Self {
            current: Timestamp::new(0, owner),
        }
    }

    pub fn current(&self) -> Timestamp {
        self.current
    }

    pub fn owner(&self) -> NodeId {
        self.current.owner
    }

    /// Reads the clock for sending: returns the current value and moves the
    /// clock strictly past it.
    pub fn issue(&mut self) -> Timestamp {
        let issued = self.current;
        self.current.counter += 1;
        issued
    }

    /// Moves the clock to the smallest value owned by this node that is
    /// strictly greater than `observed`, if `observed >= current`.
    pub fn observe(&mut self, observed: Timestamp) {
        if observed >= self.current {
            let owner = self.current.owner;
            let counter = if owner > observed.owner {
                observed.counter
            } else {
                observed.counter + 1
            };
            self.current = Timestamp::new(counter, owner);
        }
    }
}

/// Value-returning form of [`LogicalClock::observe`].
pub fn clock_advance(clock: LogicalClock, observed: Timestamp) -> LogicalClock {
    let mut next = clock;
    next.observe(observed);
    next
}
