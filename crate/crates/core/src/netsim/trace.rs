//! Line-delimited JSON event traces.
//!
//! The first record is the scenario header, so a trace file carries
//! everything needed to re-run it.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::command::{Command, CommandId, NodeId};
use crate::error::{Error, Result};
use crate::history::{Ballot, PredSet};
use crate::netsim::Scenario;
use crate::protocol::{Decision, Message, MessageKind, Note, Timer};
use crate::timestamp::Timestamp;

pub const TRACE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undecided {
    pub id: CommandId,
    /// Live nodes that never decided the command.
    pub missing: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "kebab-case")]
pub enum Record {
    Header {
        format: u32,
        scenario: Scenario,
    },
    Propose {
        t: u64,
        node: NodeId,
        cmd: Command,
    },
    Send {
        t: u64,
        msg_id: u64,
        from: NodeId,
        to: NodeId,
        at: u64,
        msg: Message,
    },
    Deliver {
        t: u64,
        msg_id: u64,
        from: NodeId,
        to: NodeId,
        kind: MessageKind,
        id: CommandId,
    },
    Drop {
        t: u64,
        msg_id: u64,
        from: NodeId,
        to: NodeId,
    },
    Timer {
        t: u64,
        node: NodeId,
        timer: Timer,
    },
    Decide {
        t: u64,
        node: NodeId,
        id: CommandId,
        ts: Timestamp,
        pred: PredSet,
        ballot: Ballot,
        index: usize,
        repeat: bool,
    },
    Crash {
        t: u64,
        node: NodeId,
    },
    Suspect {
        t: u64,
        node: NodeId,
        leader: NodeId,
        id: CommandId,
    },
    Note {
        t: u64,
        node: NodeId,
        #[serde(flatten)]
        note: Note,
    },
    End {
        t: u64,
        events: u64,
        quiescent: bool,
        undecided: Vec<Undecided>,
    },
}

impl Record {
    pub fn tick(&self) -> u64 {
        match self {
            Record::Header { .. } => 0,
            Record::Propose { t, .. }
            | Record::Send { t, .. }
            | Record::Deliver { t, .. }
            | Record::Drop { t, .. }
            | Record::Timer { t, .. }
            | Record::Decide { t, .. }
            | Record::Crash { t, .. }
            | Record::Suspect { t, .. }
            | Record::Note { t, .. }
            | Record::End { t, .. } => *t,
        }
    }

    pub fn decide(t: u64, node: NodeId, d: &Decision) -> Self {
        Record::Decide {
            t,
            node,
            id: d.command.id,
            ts: d.ts,
            pred: d.pred.clone(),
            ballot: d.ballot,
            index: d.index,
            repeat: d.repeat,
        }
    }
}

/// One decision as seen by one node, the unit the checkers work on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub node: NodeId,
    pub command: Command,
    pub ts: Timestamp,
    pub pred: PredSet,
    pub ballot: Ballot,
    pub index: usize,
    pub repeat: bool,
    pub tick: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        match self.records.first() {
            Some(Record::Header { scenario, .. }) => Some(scenario),
            _ => None,
        }
    }

    pub fn commands(&self) -> BTreeMap<CommandId, Command> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Propose { cmd, .. } => Some((cmd.id, cmd.clone())),
                _ => None,
            })
            .collect()
    }

    /// Decision records joined with the proposed command payloads.
    pub fn decisions(&self) -> Result<Vec<DecisionRecord>> {
        let cmds = self.commands();
        let mut out = Vec::new();
        for r in &self.records {
            if let Record::Decide {
                t,
                node,
                id,
                ts,
                pred,
                ballot,
                index,
                repeat,
            } = r
            {
                let command = cmds
                    .get(id)
                    .ok_or_else(|| Error::Trace(format!("decision for unproposed command {id}")))?
                    .clone();
                out.push(DecisionRecord {
                    node: *node,
                    command,
                    ts: *ts,
                    pred: pred.clone(),
                    ballot: *ballot,
                    index: *index,
                    repeat: *repeat,
                    tick: *t,
                });
            }
        }
        Ok(out)
    }

    /// Per-node decision logs, in decision order, without repeats.
    pub fn logs(&self) -> BTreeMap<NodeId, Vec<CommandId>> {
        let mut logs: BTreeMap<NodeId, Vec<CommandId>> = BTreeMap::new();
        for r in &self.records {
            if let Record::Decide {
                node, id, repeat: false, ..
            } = r
            {
                logs.entry(*node).or_default().push(*id);
            }
        }
        logs
    }

    pub fn end(&self) -> Option<&Record> {
        self.records.iter().rev().find(|r| matches!(r, Record::End { .. }))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::Trace(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}
