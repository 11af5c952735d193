//! Small real-network deployment over loopback TCP.
//!
//! Each node runs one thread that owns its `NodeState`. Reader threads
//! decode inbound frames and push them onto that thread's queue, so the
//! protocol code stays single-threaded. Meant for smoke tests; the
//! simulator is the tool for anything that needs reproducible timing.

use std::collections::BTreeMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::command::{Command, NodeId};
use crate::netsim::ConflictRelation;
use crate::protocol::{Action, Decision, Message, NodeConfig, NodeState, Timer};
use crate::quorum::QuorumConfig;
use crate::wire::{read_frame, write_frame, Frame};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub n: usize,
    pub fast_timeout: Duration,
    pub conflict: ConflictRelation,
}

impl LiveConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            fast_timeout: Duration::from_millis(200),
            conflict: ConflictRelation::SameKey,
        }
    }
}

enum Event {
    Inbound { from: NodeId, msg: Message },
    Propose(Command),
    Stop,
}

pub struct LiveCluster {
    addrs: Vec<SocketAddr>,
    inboxes: Vec<Sender<Event>>,
    decisions: Receiver<(NodeId, Decision)>,
    nodes: Vec<JoinHandle<NodeState>>,
    stop: Arc<AtomicBool>,
}

impl LiveCluster {
    /// Binds one loopback listener per node and starts all threads.
    pub fn start(cfg: LiveConfig) -> io::Result<Self> {
        let quorum = QuorumConfig::new(cfg.n).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let listeners = (0..cfg.n)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<io::Result<Vec<_>>>()?;
        let addrs = listeners
            .iter()
            .map(TcpListener::local_addr)
            .collect::<io::Result<Vec<_>>>()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (decide_tx, decisions) = mpsc::channel();
        let mut inboxes = Vec::new();
        let mut queues = Vec::new();
        for _ in 0..cfg.n {
            let (tx, rx) = mpsc::channel();
            inboxes.push(tx);
            queues.push(rx);
        }
        for (i, listener) in listeners.into_iter().enumerate() {
            let inbox = inboxes[i].clone();
            let stop = stop.clone();
            thread::spawn(move || accept_loop(listener, inbox, stop));
        }
        let mut nodes = Vec::new();
        for (i, queue) in queues.into_iter().enumerate() {
            let mut c = NodeConfig::new(NodeId(i as u32), quorum);
            c.conflict = cfg.conflict.function();
            let worker = Worker {
                state: NodeState::new(c),
                queue,
                own: inboxes[i].clone(),
                addrs: addrs.clone(),
                peers: BTreeMap::new(),
                timers: Vec::new(),
                fast_timeout: cfg.fast_timeout,
                decisions: decide_tx.clone(),
            };
            nodes.push(thread::spawn(move || worker.run()));
        }
        Ok(Self {
            addrs,
            inboxes,
            decisions,
            nodes,
            stop,
        })
    }

    pub fn addrs(&self) -> &[SocketAddr] {
        &self.addrs
    }

    pub fn propose(&self, node: NodeId, cmd: Command) {
        let _ = self.inboxes[node.index()].send(Event::Propose(cmd));
    }

    /// Next decision from any node, or `None` after `timeout`.
    pub fn next_decision(&self, timeout: Duration) -> Option<(NodeId, Decision)> {
        self.decisions.recv_timeout(timeout).ok()
    }

    /// Stops every node and returns their final states.
    pub fn shutdown(self) -> Vec<NodeState> {
        self.stop.store(true, Ordering::SeqCst);
        for tx in &self.inboxes {
            let _ = tx.send(Event::Stop);
        }
        // Wake the acceptors so they notice the flag.
        for a in &self.addrs {
            let _ = TcpStream::connect(a);
        }
        self.nodes
            .into_iter()
            .map(|h| h.join().expect("node thread panicked"))
            .collect()
    }
}

fn accept_loop(listener: TcpListener, inbox: Sender<Event>, stop: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = conn else { continue };
        let inbox = inbox.clone();
        thread::spawn(move || read_loop(stream, inbox));
    }
}

fn read_loop(stream: TcpStream, inbox: Sender<Event>) {
    let mut r = BufReader::new(stream);
    let from = match read_frame(&mut r) {
        Ok(Frame::Hello { node }) => node,
        Ok(_) => {
            warn!("connection did not start with a hello frame");
            return;
        }
        Err(_) => return,
    };
    loop {
        match read_frame(&mut r) {
            Ok(Frame::Msg(msg)) => {
                if inbox.send(Event::Inbound { from, msg }).is_err() {
                    return;
                }
            }
            Ok(Frame::Hello { .. }) => warn!("duplicate hello from {from}"),
            Err(e) => {
                debug!("connection from {from} closed: {e}");
                return;
            }
        }
    }
}

struct Worker {
    state: NodeState,
    queue: Receiver<Event>,
    own: Sender<Event>,
    addrs: Vec<SocketAddr>,
    peers: BTreeMap<NodeId, BufWriter<TcpStream>>,
    timers: Vec<(Instant, Timer)>,
    fast_timeout: Duration,
    decisions: Sender<(NodeId, Decision)>,
}

impl Worker {
    fn run(mut self) -> NodeState {
        loop {
            let now = Instant::now();
            let due: Vec<Timer> = {
                let (due, rest): (Vec<_>, Vec<_>) = self.timers.drain(..).partition(|(at, _)| *at <= now);
                self.timers = rest;
                due.into_iter().map(|(_, t)| t).collect()
            };
            for t in due {
                let actions = self.state.on_timer(t);
                self.apply(actions);
            }
            let wait = self
                .timers
                .iter()
                .map(|(at, _)| at.saturating_duration_since(now))
                .min()
                .unwrap_or(Duration::from_millis(50));
            match self.queue.recv_timeout(wait) {
                Ok(Event::Inbound { from, msg }) => {
                    let actions = self.state.handle(from, msg);
                    self.apply(actions);
                }
                Ok(Event::Propose(cmd)) => {
                    let actions = self.state.propose(cmd);
                    self.apply(actions);
                }
                Ok(Event::Stop) | Err(RecvTimeoutError::Disconnected) => return self.state,
                Err(RecvTimeoutError::Timeout) => {}
            }
        }
    }

    fn apply(&mut self, actions: Vec<Action>) {
        let me = self.state.id();
        for a in actions {
            match a {
                Action::Send { to, msg } if to == me => {
                    let _ = self.own.send(Event::Inbound { from: me, msg });
                }
                Action::Send { to, msg } => {
                    if let Err(e) = self.send(to, msg) {
                        // A broken peer is treated as crashed.
                        debug!("{me}: send to {to} failed: {e}");
                        self.peers.remove(&to);
                    }
                }
                Action::SetTimer(t) => self.timers.push((Instant::now() + self.fast_timeout, t)),
                Action::Decide(d) => {
                    let _ = self.decisions.send((me, d));
                }
                Action::Note(_) => {}
            }
        }
    }

    fn send(&mut self, to: NodeId, msg: Message) -> io::Result<()> {
        if !self.peers.contains_key(&to) {
            let stream = TcpStream::connect(self.addrs[to.index()])?;
            stream.set_nodelay(true)?;
            let mut w = BufWriter::new(stream);
            write_frame(&mut w, &Frame::Hello { node: self.state.id() }).map_err(io::Error::other)?;
            self.peers.insert(to, w);
        }
        let w = self.peers.get_mut(&to).expect("just connected");
        write_frame(w, &Frame::Msg(msg)).map_err(io::Error::other)?;
        w.flush()
    }
}
