//! Three nodes talking over loopback TCP.
//!
//! cargo run --example live_cluster

use std::time::Duration;

use caesar::live::{LiveCluster, LiveConfig};
use caesar::{Command, CommandId, KvCommand, NodeId};

fn main() -> std::io::Result<()> {
    let cluster = LiveCluster::start(LiveConfig::new(3))?;
    for (i, a) in cluster.addrs().iter().enumerate() {
        println!("p{i} listening on {a}");
    }
    for seq in 0..3u64 {
        for node in 0..3u32 {
            let id = CommandId::new(NodeId(node), seq);
            cluster.propose(NodeId(node), Command::new(id, KvCommand::put("x", vec![node as u8])));
        }
    }
    let mut decisions = 0;
    while let Some((node, d)) = cluster.next_decision(Duration::from_secs(2)) {
        println!("{node} decided {} at {} (index {})", d.command.id, d.ts, d.index);
        decisions += 1;
        if decisions == 27 {
            break;
        }
    }
    for s in cluster.shutdown() {
        println!("{} log: {:?}", s.id(), s.decision_log());
    }
    Ok(())
}
