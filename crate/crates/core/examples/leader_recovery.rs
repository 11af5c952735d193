//! A leader crashes with its command half-way through; the survivors notice
//! the silence, recover the command and decide it.
//!
//! cargo run --example leader_recovery

use caesar::netsim::{Record, Scenario, Simulation};
use caesar::protocol::Note;
use caesar::verify::check_trace;
use caesar::NodeId;

fn main() {
    let mut sim = Simulation::new(Scenario::uniform(5, 10)).expect("valid scenario");
    let c = sim.propose_at(0, NodeId(0), "k", b"from p0");
    sim.propose_at(5, NodeId(3), "k", b"from p3");
    // The fast proposals have landed, the replies have not.
    sim.crash_at(NodeId(0), 15);
    let out = sim.run();
    for r in &out.trace.records {
        match r {
            Record::Crash { t, node } => println!("{t:>5} {node} crashes"),
            Record::Suspect { t, node, leader, id } => println!("{t:>5} {node} suspects {leader} for {id}"),
            Record::Note {
                t,
                node,
                note: Note::RecoveryStarted { id, ballot },
            } => println!("{t:>5} {node} recovers {id} at ballot {ballot}"),
            Record::Note {
                t,
                node,
                note: Note::RecoveryResolved { id, case, .. },
            } => println!("{t:>5} {node} resolves {id}: {case:?}"),
            Record::Decide { t, node, id, ts, pred, .. } if *id == c => {
                println!("{t:>5} {node} decides {id} ts={ts} pred={pred:?}")
            }
            _ => {}
        }
    }
    println!("undecided={}", out.undecided.len());
    print!("{}", check_trace(&out.trace).expect("trace decodes"));
}
