use std::collections::VecDeque;

use super::*;
use crate::rsm::KvCommand;

fn ts(k: u64, i: u32) -> Timestamp {
    Timestamp::new(k, NodeId(i))
}

fn cmd(p: u32, seq: u64, key: &str) -> Command {
    Command::new(CommandId::new(NodeId(p), seq), KvCommand::put(key, vec![p as u8]))
}

fn node(i: u32, n: usize) -> NodeState {
    NodeState::new(NodeConfig::new(NodeId(i), QuorumConfig::new(n).unwrap()))
}

fn sends(actions: &[Action]) -> Vec<(NodeId, Message)> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Send { to, msg } => Some((*to, msg.clone())),
            _ => None,
        })
        .collect()
}

fn notes(actions: &[Action]) -> Vec<Note> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Note(n) => Some(n.clone()),
            _ => None,
        })
        .collect()
}

/// FIFO all-to-all delivery, no timers.
struct Cluster {
    nodes: Vec<NodeState>,
    queue: VecDeque<(NodeId, NodeId, Message)>,
    decided: Vec<Vec<Decision>>,
    notes: Vec<Note>,
}

impl Cluster {
    fn new(n: usize) -> Self {
        Self {
            nodes: (0..n as u32).map(|i| node(i, n)).collect(),
            queue: VecDeque::new(),
            decided: vec![Vec::new(); n],
            notes: Vec::new(),
        }
    }

    fn absorb(&mut self, from: NodeId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { to, msg } => self.queue.push_back((from, to, msg)),
                Action::Decide(d) => self.decided[from.index()].push(d),
                Action::Note(n) => self.notes.push(n),
                Action::SetTimer(_) => {}
            }
        }
    }

    fn propose(&mut self, c: Command) {
        let from = c.id.proposer;
        let acts = self.nodes[from.index()].propose(c);
        self.absorb(from, acts);
    }

    fn run(&mut self) {
        while let Some((from, to, msg)) = self.queue.pop_front() {
            let acts = self.nodes[to.index()].handle(from, msg);
            self.absorb(to, acts);
        }
    }
}

#[test]
fn initial_proposal_uses_fresh_timestamp_and_null_whitelist() {
    let mut p = node(2, 5);
    let acts = p.propose(cmd(2, 0, "k"));
    let s = sends(&acts);
    assert_eq!(s.len(), 5);
    for (_, m) in &s {
        match m {
            Message::FastPropose {
                ballot, ts: t, whitelist, ..
            } => {
                assert_eq!(*ballot, 0);
                assert_eq!(*t, ts(0, 2));
                assert!(whitelist.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert!(acts.contains(&Action::SetTimer(Timer::FastProposalTimeout {
        id: CommandId::new(NodeId(2), 0),
        ballot: 0
    })));
}

#[test]
fn duplicate_proposal_is_a_noop() {
    let mut p = node(0, 3);
    p.propose(cmd(0, 0, "k"));
    let again = p.propose(cmd(0, 0, "k"));
    assert!(sends(&again).is_empty());
    assert!(matches!(notes(&again)[..], [Note::DuplicatePropose { .. }]));
}

#[test]
fn conflict_free_command_is_fast_decided_everywhere() {
    let mut cl = Cluster::new(5);
    let c = cmd(0, 0, "k");
    cl.propose(c.clone());
    cl.run();
    for d in &cl.decided {
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].command, c);
        assert_eq!(d[0].ts, ts(0, 0));
        assert!(d[0].pred.is_empty());
    }
    assert!(cl
        .notes
        .iter()
        .any(|n| matches!(n, Note::Transition { kind: Transition::FastDecision, .. })));
}

#[test]
fn concurrent_conflicting_commands_decide_in_one_order() {
    let mut cl = Cluster::new(5);
    let a = cmd(0, 0, "k");
    let b = cmd(1, 0, "k");
    cl.propose(a.clone());
    cl.propose(b.clone());
    cl.run();
    let order: Vec<Vec<CommandId>> = cl
        .decided
        .iter()
        .map(|ds| ds.iter().map(|d| d.command.id).collect())
        .collect();
    for o in &order {
        assert_eq!(o.len(), 2);
        assert_eq!(o, &order[0]);
    }
    // One of the two must be a predecessor of the other.
    let first = &cl.decided[0][0];
    let second = &cl.decided[0][1];
    assert!(second.pred.contains(&first.command.id) || first.pred.contains(&second.command.id));
}

#[test]
fn rejection_suggests_a_higher_timestamp() {
    let mut p = node(1, 5);
    let c = cmd(0, 0, "k");
    let cbar = cmd(4, 0, "k");
    p.handle(
        NodeId(4),
        Message::Stable {
            cmd: cbar,
            ballot: 0,
            ts: ts(4, 4),
            pred: PredSet::new(),
        },
    );
    let acts = p.handle(
        NodeId(0),
        Message::FastPropose {
            cmd: c.clone(),
            ballot: 0,
            ts: ts(0, 0),
            whitelist: None,
        },
    );
    match &sends(&acts)[..] {
        [(to, Message::FastProposeR { ok, ts: t, .. })] => {
            assert_eq!(*to, NodeId(0));
            assert!(!ok);
            assert!(*t > ts(4, 4));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(p.history().get(&c.id).unwrap().status, Status::Rejected);
}

#[test]
fn deferred_reply_released_when_blocker_settles() {
    let mut p = node(1, 5);
    let c = cmd(0, 0, "k");
    let cbar = cmd(4, 0, "k");
    // c̄ is fast-pending above c and does not list c: c must wait.
    let acts = p.handle(
        NodeId(4),
        Message::FastPropose {
            cmd: cbar.clone(),
            ballot: 0,
            ts: ts(4, 4),
            whitelist: None,
        },
    );
    assert_eq!(sends(&acts).len(), 1);
    let acts = p.handle(
        NodeId(0),
        Message::FastPropose {
            cmd: c.clone(),
            ballot: 0,
            ts: ts(0, 0),
            whitelist: None,
        },
    );
    assert!(sends(&acts).is_empty());
    assert!(matches!(notes(&acts)[..], [Note::WaitStarted { .. }]));
    assert!(p.pending_waits().contains_key(&c.id));

    // c̄ becomes stable with c as predecessor: the wait ends with OK.
    let acts = p.handle(
        NodeId(4),
        Message::Stable {
            cmd: cbar,
            ballot: 0,
            ts: ts(4, 4),
            pred: [c.id].into(),
        },
    );
    match &sends(&acts)[..] {
        [(to, Message::FastProposeR { ok, ts: t, .. })] => {
            assert_eq!(*to, NodeId(0));
            assert!(ok);
            assert_eq!(*t, ts(0, 0));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(p.pending_waits().is_empty());
}

#[test]
fn retry_is_never_rejected() {
    let mut p = node(1, 3);
    let c = cmd(0, 0, "k");
    let cbar = cmd(2, 0, "k");
    p.handle(
        NodeId(2),
        Message::Stable {
            cmd: cbar.clone(),
            ballot: 0,
            ts: ts(9, 2),
            pred: PredSet::new(),
        },
    );
    let acts = p.handle(
        NodeId(0),
        Message::Retry {
            cmd: c.clone(),
            ballot: 0,
            ts: ts(10, 0),
            pred: PredSet::new(),
        },
    );
    match &sends(&acts)[..] {
        [(_, Message::RetryR { extra_pred, .. })] => assert_eq!(extra_pred, &PredSet::from([cbar.id])),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(p.history().get(&c.id).unwrap().status, Status::Accepted);
}

#[test]
fn lower_ballot_proposals_are_dropped() {
    let mut p = node(1, 3);
    let c = cmd(0, 0, "k");
    let acts = p.handle(NodeId(2), Message::Recovery { id: c.id, ballot: 2 });
    assert!(matches!(
        &sends(&acts)[..],
        [(_, Message::RecoveryR { ballot: 2, payload: None, .. })]
    ));
    let acts = p.handle(
        NodeId(0),
        Message::FastPropose {
            cmd: c,
            ballot: 0,
            ts: ts(0, 0),
            whitelist: None,
        },
    );
    assert!(acts.is_empty());
}

#[test]
fn recovery_gate_is_strict() {
    let mut p = node(1, 3);
    let id = CommandId::new(NodeId(0), 0);
    assert_eq!(sends(&p.handle(NodeId(2), Message::Recovery { id, ballot: 1 })).len(), 1);
    assert!(sends(&p.handle(NodeId(0), Message::Recovery { id, ballot: 1 })).is_empty());
}

#[test]
fn recovery_echoes_local_entry() {
    let mut p = node(1, 5);
    let c = cmd(4, 0, "k");
    let x = CommandId::new(NodeId(2), 0);
    p.handle(
        NodeId(4),
        Message::Retry {
            cmd: c.clone(),
            ballot: 0,
            ts: ts(4, 4),
            pred: [x].into(),
        },
    );
    let acts = p.handle(NodeId(3), Message::Recovery { id: c.id, ballot: 1 });
    let expected = EntrySnapshot {
        ts: ts(4, 4),
        pred: [x].into(),
        status: Status::Accepted,
        ballot: 0,
        forced: false,
    };
    assert_eq!(
        sends(&acts),
        vec![(
            NodeId(3),
            Message::RecoveryR {
                id: c.id,
                ballot: 1,
                payload: Some(expected)
            }
        )]
    );
}

#[test]
fn start_recovery_bumps_ballot_and_asks_the_others() {
    let mut p = node(1, 3);
    let c = cmd(0, 0, "k");
    p.handle(
        NodeId(0),
        Message::FastPropose {
            cmd: c.clone(),
            ballot: 0,
            ts: ts(0, 0),
            whitelist: None,
        },
    );
    let acts = p.start_recovery(c.id);
    let s = sends(&acts);
    assert_eq!(s.len(), 2);
    for (to, m) in s {
        assert_ne!(to, NodeId(1));
        assert_eq!(m, Message::Recovery { id: c.id, ballot: 1 });
    }
    assert_eq!(p.ballot_of(&c.id), 1);
    assert_eq!(p.leading_phase(&c.id), Some((1, PhaseTag::Recovering)));
}

#[test]
fn recovery_after_leader_silence_decides_command() {
    // Leader p0 sends FastPropose and goes silent; p1 recovers.
    let mut cl = Cluster::new(3);
    let c = cmd(0, 0, "k");
    cl.propose(c.clone());
    // Deliver only the FastPropose messages, drop the leader's inbox.
    let proposals: Vec<_> = cl.queue.drain(..).collect();
    for (from, to, msg) in proposals {
        if to != NodeId(0) {
            let acts = cl.nodes[to.index()].handle(from, msg);
            cl.absorb(to, acts);
        }
    }
    cl.queue.retain(|(_, to, _)| *to != NodeId(0));
    assert!(cl.queue.is_empty());
    let acts = cl.nodes[1].start_recovery(c.id);
    cl.absorb(NodeId(1), acts);
    let drain = |cl: &mut Cluster| {
        while let Some((from, to, msg)) = cl.queue.pop_front() {
            if from == NodeId(0) || to == NodeId(0) {
                continue;
            }
            let acts = cl.nodes[to.index()].handle(from, msg);
            cl.absorb(to, acts);
        }
    };
    drain(&mut cl);
    // Two of three replies: the fast quorum is out of reach until the
    // proposal times out.
    assert!(cl.decided[1].is_empty());
    let acts = cl.nodes[1].on_timer(Timer::FastProposalTimeout { id: c.id, ballot: 1 });
    cl.absorb(NodeId(1), acts);
    drain(&mut cl);
    for i in [1, 2] {
        assert_eq!(cl.decided[i].len(), 1);
        assert_eq!(cl.decided[i][0].ts, ts(0, 0));
    }
    assert!(cl.notes.iter().any(|n| matches!(
        n,
        Note::RecoveryResolved {
            case: RecoveryCase::FastPending,
            ..
        }
    )));
}

#[test]
fn stable_command_answers_late_proposals() {
    let mut p = node(1, 3);
    let c = cmd(0, 0, "k");
    p.handle(
        NodeId(0),
        Message::Stable {
            cmd: c.clone(),
            ballot: 0,
            ts: ts(0, 0),
            pred: PredSet::new(),
        },
    );
    let acts = p.handle(
        NodeId(2),
        Message::SlowPropose {
            cmd: c.clone(),
            ballot: 1,
            ts: ts(7, 2),
            pred: PredSet::new(),
        },
    );
    assert_eq!(
        sends(&acts),
        vec![(
            NodeId(2),
            Message::Stable {
                cmd: c.clone(),
                ballot: 1,
                ts: ts(0, 0),
                pred: PredSet::new()
            }
        )]
    );
    assert_eq!(p.history().get(&c.id).unwrap().status, Status::Stable);
}
