use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use caesar::live::{LiveCluster, LiveConfig};
use caesar::{Command, CommandId, KvCommand, NodeId};

#[test]
fn loopback_cluster_decides_conflicting_commands_in_one_order() {
    let cluster = LiveCluster::start(LiveConfig::new(3)).unwrap();
    assert_eq!(cluster.addrs().len(), 3);
    let mut expected = 0;
    for seq in 0..4u64 {
        for node in 0..3u32 {
            let key = if seq % 2 == 0 { "shared" } else { "own" };
            let cmd = Command::new(
                CommandId::new(NodeId(node), seq),
                KvCommand::put(format!("{key}{}", if key == "own" { node } else { 0 }), vec![seq as u8]),
            );
            cluster.propose(NodeId(node), cmd);
            expected += 1;
        }
    }
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut per_node: BTreeMap<NodeId, usize> = BTreeMap::new();
    while per_node.values().sum::<usize>() < 3 * expected && Instant::now() < deadline {
        if let Some((node, d)) = cluster.next_decision(Duration::from_millis(200)) {
            assert!(!d.repeat);
            *per_node.entry(node).or_default() += 1;
        }
    }
    let states = cluster.shutdown();
    assert_eq!(per_node.values().sum::<usize>(), 3 * expected, "{per_node:?}");
    // Commands on the shared key appear in the same order everywhere.
    let shared: Vec<Vec<CommandId>> = states
        .iter()
        .map(|s| {
            s.decision_log()
                .iter()
                .copied()
                .filter(|id| id.seq % 2 == 0)
                .collect()
        })
        .collect();
    assert_eq!(shared[0].len(), 6);
    assert!(shared.iter().all(|l| *l == shared[0]), "{shared:?}");
}
