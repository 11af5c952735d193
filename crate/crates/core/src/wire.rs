//! Binary framing for the TCP transport.
//!
//! A frame is a 4-byte big-endian length, covering everything after it,
//! then a 1-byte tag and the fields in fixed order: ballot (8 bytes),
//! command id (4-byte node + 8-byte sequence), timestamp (8-byte counter +
//! 2-byte owner), predecessor sets as a 4-byte count followed by ids.
//! Integers are big-endian throughout.

use std::io::{Read, Write};

use crate::command::{Command, CommandId, NodeId};
use crate::error::WireError;
use crate::history::{PredSet, Status};
use crate::protocol::{EntrySnapshot, Message};
use crate::rsm::{KvCommand, OpType};
use crate::timestamp::Timestamp;

/// Frames larger than this are rejected before allocating.
pub const MAX_FRAME: usize = 16 << 20;

const TAG_HELLO: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// First frame on every connection: who is talking.
    Hello { node: NodeId },
    Msg(Message),
}

fn tag_of(m: &Message) -> u8 {
    match m {
        Message::FastPropose { .. } => 1,
        Message::FastProposeR { .. } => 2,
        Message::SlowPropose { .. } => 3,
        Message::SlowProposeR { .. } => 4,
        Message::Retry { .. } => 5,
        Message::RetryR { .. } => 6,
        Message::Stable { .. } => 7,
        Message::Recovery { .. } => 8,
        Message::RecoveryR { .. } => 9,
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }
    fn bytes(&mut self, b: &[u8]) -> Result<(), WireError> {
        let len = u32::try_from(b.len()).map_err(|_| WireError::Invalid("field too long"))?;
        self.u32(len);
        self.0.extend_from_slice(b);
        Ok(())
    }
    fn id(&mut self, id: &CommandId) {
        self.u32(id.proposer.0);
        self.u64(id.seq);
    }
    fn ts(&mut self, ts: &Timestamp) -> Result<(), WireError> {
        let owner = u16::try_from(ts.owner.0).map_err(|_| WireError::Invalid("timestamp owner exceeds 16 bits"))?;
        self.u64(ts.counter);
        self.0.extend_from_slice(&owner.to_be_bytes());
        Ok(())
    }
    fn pred(&mut self, p: &PredSet) -> Result<(), WireError> {
        let len = u32::try_from(p.len()).map_err(|_| WireError::Invalid("pred set too large"))?;
        self.u32(len);
        for id in p {
            self.id(id);
        }
        Ok(())
    }
    fn cmd(&mut self, c: &Command) -> Result<(), WireError> {
        self.id(&c.id);
        self.u8(match c.op.op {
            OpType::Put => 0,
            OpType::Get => 1,
        });
        self.bytes(c.op.key.as_bytes())?;
        self.bytes(&c.op.value)
    }
}

struct Dec<'a>(&'a [u8]);

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated {
                needed: n - self.0.len(),
            });
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::Invalid("bool")),
        }
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn id(&mut self) -> Result<CommandId, WireError> {
        Ok(CommandId::new(NodeId(self.u32()?), self.u64()?))
    }
    fn ts(&mut self) -> Result<Timestamp, WireError> {
        let counter = self.u64()?;
        Ok(Timestamp::new(counter, NodeId(u32::from(self.u16()?))))
    }
    fn pred(&mut self) -> Result<PredSet, WireError> {
        let n = self.u32()? as usize;
        // Each id is 12 bytes; refuse counts the frame cannot hold.
        if n.saturating_mul(12) > self.0.len() {
            return Err(WireError::Truncated {
                needed: n * 12 - self.0.len(),
            });
        }
        let mut p = PredSet::new();
        for _ in 0..n {
            p.insert(self.id()?);
        }
        Ok(p)
    }
    fn cmd(&mut self) -> Result<Command, WireError> {
        let id = self.id()?;
        let op = match self.u8()? {
            0 => OpType::Put,
            1 => OpType::Get,
            _ => return Err(WireError::Invalid("operation type")),
        };
        let key = String::from_utf8(self.bytes()?).map_err(|_| WireError::Invalid("key is not utf-8"))?;
        let value = self.bytes()?;
        Ok(Command::new(id, KvCommand { key, op, value }))
    }
    fn status(&mut self) -> Result<Status, WireError> {
        Ok(match self.u8()? {
            0 => Status::FastPending,
            1 => Status::SlowPending,
            2 => Status::Accepted,
            3 => Status::Rejected,
            4 => Status::Stable,
            _ => return Err(WireError::Invalid("status")),
        })
    }
}

fn status_byte(s: Status) -> u8 {
    match s {
        Status::FastPending => 0,
        Status::SlowPending => 1,
        Status::Accepted => 2,
        Status::Rejected => 3,
        Status::Stable => 4,
    }
}

fn encode_body(e: &mut Enc, m: &Message) -> Result<(), WireError> {
    match m {
        Message::FastPropose {
            cmd,
            ballot,
            ts,
            whitelist,
        } => {
            e.u64(*ballot);
            e.cmd(cmd)?;
            e.ts(ts)?;
            match whitelist {
                None => e.u8(0),
                Some(w) => {
                    e.u8(1);
                    e.pred(w)?;
                }
            }
        }
        Message::FastProposeR {
            id,
            ballot,
            ok,
            ts,
            pred,
        }
        | Message::SlowProposeR {
            id,
            ballot,
            ok,
            ts,
            pred,
        } => {
            e.u64(*ballot);
            e.id(id);
            e.ts(ts)?;
            e.pred(pred)?;
            e.bool(*ok);
        }
        Message::SlowPropose { cmd, ballot, ts, pred }
        | Message::Retry { cmd, ballot, ts, pred }
        | Message::Stable { cmd, ballot, ts, pred } => {
            e.u64(*ballot);
            e.cmd(cmd)?;
            e.ts(ts)?;
            e.pred(pred)?;
        }
        Message::RetryR {
            id,
            ballot,
            ts,
            pred,
            extra_pred,
        } => {
            e.u64(*ballot);
            e.id(id);
            e.ts(ts)?;
            e.pred(pred)?;
            e.pred(extra_pred)?;
        }
        Message::Recovery { id, ballot } => {
            e.u64(*ballot);
            e.id(id);
        }
        Message::RecoveryR { id, ballot, payload } => {
            e.u64(*ballot);
            e.id(id);
            match payload {
                None => e.u8(0),
                Some(s) => {
                    e.u8(1);
                    e.ts(&s.ts)?;
                    e.pred(&s.pred)?;
                    e.u8(status_byte(s.status));
                    e.u64(s.ballot);
                    e.bool(s.forced);
                }
            }
        }
    }
    Ok(())
}

fn decode_body(tag: u8, d: &mut Dec<'_>) -> Result<Message, WireError> {
    Ok(match tag {
        1 => {
            let ballot = d.u64()?;
            let cmd = d.cmd()?;
            let ts = d.ts()?;
            let whitelist = match d.u8()? {
                0 => None,
                1 => Some(d.pred()?),
                _ => return Err(WireError::Invalid("whitelist flag")),
            };
            Message::FastPropose {
                cmd,
                ballot,
                ts,
                whitelist,
            }
        }
        2 | 4 => {
            let ballot = d.u64()?;
            let id = d.id()?;
            let ts = d.ts()?;
            let pred = d.pred()?;
            let ok = d.bool()?;
            if tag == 2 {
                Message::FastProposeR {
                    id,
                    ballot,
                    ok,
                    ts,
                    pred,
                }
            } else {
                Message::SlowProposeR {
                    id,
                    ballot,
                    ok,
                    ts,
                    pred,
                }
            }
        }
        3 | 5 | 7 => {
            let ballot = d.u64()?;
            let cmd = d.cmd()?;
            let ts = d.ts()?;
            let pred = d.pred()?;
            match tag {
                3 => Message::SlowPropose { cmd, ballot, ts, pred },
                5 => Message::Retry { cmd, ballot, ts, pred },
                _ => Message::Stable { cmd, ballot, ts, pred },
            }
        }
        6 => {
            let ballot = d.u64()?;
            let id = d.id()?;
            let ts = d.ts()?;
            let pred = d.pred()?;
            let extra_pred = d.pred()?;
            Message::RetryR {
                id,
                ballot,
                ts,
                pred,
                extra_pred,
            }
        }
        8 => {
            let ballot = d.u64()?;
            Message::Recovery { id: d.id()?, ballot }
        }
        9 => {
            let ballot = d.u64()?;
            let id = d.id()?;
            let payload = match d.u8()? {
                0 => None,
                1 => Some(EntrySnapshot {
                    ts: d.ts()?,
                    pred: d.pred()?,
                    status: d.status()?,
                    ballot: d.u64()?,
                    forced: d.bool()?,
                }),
                _ => return Err(WireError::Invalid("payload flag")),
            };
            Message::RecoveryR { id, ballot, payload }
        }
        other => return Err(WireError::UnknownTag(other)),
    })
}

/// Encodes a complete frame, length prefix included.
pub fn encode(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let mut e = Enc(vec![0; 4]);
    match frame {
        Frame::Hello { node } => {
            e.u8(TAG_HELLO);
            e.u32(node.0);
        }
        Frame::Msg(m) => {
            e.u8(tag_of(m));
            encode_body(&mut e, m)?;
        }
    }
    let len = e.0.len() - 4;
    if len > MAX_FRAME {
        return Err(WireError::Invalid("frame too large"));
    }
    e.0[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(e.0)
}

/// Decodes one frame from the front of `buf`, returning it and the number
/// of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Frame, usize), WireError> {
    let mut d = Dec(buf);
    let len = d.u32()? as usize;
    if len > MAX_FRAME {
        return Err(WireError::Invalid("frame too large"));
    }
    let body = d.take(len)?;
    Ok((decode_payload(body)?, 4 + len))
}

fn decode_payload(body: &[u8]) -> Result<Frame, WireError> {
    let mut d = Dec(body);
    let tag = d.u8()?;
    let frame = if tag == TAG_HELLO {
        Frame::Hello { node: NodeId(d.u32()?) }
    } else {
        Frame::Msg(decode_body(tag, &mut d)?)
    };
    if !d.0.is_empty() {
        return Err(WireError::Invalid("trailing bytes"));
    }
    Ok(frame)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&encode(frame)?)?;
    Ok(())
}

/// Blocks until a whole frame has been read.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::Invalid("frame too large"));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    decode_payload(&body)
}
