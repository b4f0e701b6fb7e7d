//! Length-prefixed message framing.
//!
//! ```text
//! u32 length (LE)   bytes that follow: 1 type byte + payload
//! u8  type          1 HELLO, 2 SAMPLES, 3 MODEL_REQUEST, 4 MODEL, 5 ACK, 6 SHUTDOWN
//! payload
//! ```
//!
//! SAMPLES payload: u32 worker id, u32 batch sequence number, u64 model step,
//! u32 state dimension, u32 count, then `count` records of
//! `state f32 x dim, action u8, reward f32, next_state f32 x dim, terminal u8`.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::replay::Transition;

/// Largest accepted value of the length field.
pub const MAX_FRAME_LEN: usize = 64 << 20;

pub const ACK_OK: u8 = 0;
/// The batch was already received; it was not stored again.
pub const ACK_DUPLICATE: u8 = 1;
/// The batch was malformed for this manager (wrong dimension or action).
pub const ACK_REJECTED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    Samples = 2,
    ModelRequest = 3,
    Model = 4,
    Ack = 5,
    Shutdown = 6,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Hello,
            2 => Self::Samples,
            3 => Self::ModelRequest,
            4 => Self::Model,
            5 => Self::Ack,
            6 => Self::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatchMsg {
    pub worker_id: u32,
    /// Per-worker counter; the manager drops repeats of a (worker, seq) pair.
    pub batch_seq: u32,
    /// Training step of the model the samples were generated with.
    pub model_step: u64,
    pub transitions: Vec<Transition>,
}

impl SampleBatchMsg {
    pub fn state_dim(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.state.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { worker_id: u32 },
    Samples(SampleBatchMsg),
    ModelRequest,
    /// Serialized model snapshot.
    Model(Vec<u8>),
    Ack(u8),
    Shutdown,
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::Samples(_) => MessageType::Samples,
            Message::ModelRequest => MessageType::ModelRequest,
            Message::Model(_) => MessageType::Model,
            Message::Ack(_) => MessageType::Ack,
            Message::Shutdown => MessageType::Shutdown,
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN} byte limit")]
    Oversize(u64),
    #[error("frame length 0 leaves no room for a type byte")]
    EmptyFrame,
    #[error("frame truncated: {needed} bytes needed, {available} present")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed {kind:?} payload: {reason}")]
    Malformed { kind: MessageType, reason: String },
    #[error("samples have inconsistent state dimensions")]
    MixedDimensions,
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(kind: MessageType, reason: impl Into<String>) -> WireError {
    WireError::Malformed {
        kind,
        reason: reason.into(),
    }
}

fn encode_samples(b: &SampleBatchMsg, out: &mut Vec<u8>) -> Result<(), WireError> {
    let dim = b.state_dim();
    if b
        .transitions
        .iter()
        .any(|t| t.state.len() != dim || t.next_state.len() != dim)
    {
        return Err(WireError::MixedDimensions);
    }
    out.extend_from_slice(&b.worker_id.to_le_bytes());
    out.extend_from_slice(&b.batch_seq.to_le_bytes());
    out.extend_from_slice(&b.model_step.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(b.transitions.len() as u32).to_le_bytes());
    for t in &b.transitions {
        t.state.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        out.push(t.action);
        out.extend_from_slice(&t.reward.to_le_bytes());
        t.next_state.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        out.push(u8::from(t.terminal));
    }
    Ok(())
}

/// Full frame, length prefix included.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut out = vec![0u8; 4];
    out.push(msg.kind() as u8);
    match msg {
        Message::Hello { worker_id } => out.extend_from_slice(&worker_id.to_le_bytes()),
        Message::Samples(b) => encode_samples(b, &mut out)?,
        Message::Model(bytes) => out.extend_from_slice(bytes),
        Message::Ack(code) => out.push(*code),
        Message::ModelRequest | Message::Shutdown => {}
    }
    let len = out.len() - 4;
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversize(len as u64));
    }
    out[..4].copy_from_slice(&(len as u32).to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    kind: MessageType,
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(malformed(
                self.kind,
                format!("{n} more bytes expected, {} left", self.buf.len()),
            ));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, WireError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(malformed(self.kind, format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn decode_samples(c: &mut Cursor<'_>) -> Result<SampleBatchMsg, WireError> {
    let worker_id = c.u32()?;
    let batch_seq = c.u32()?;
    let model_step = c.u64()?;
    let dim = c.u32()? as usize;
    let count = c.u32()? as usize;
    let record = dim.saturating_mul(8).saturating_add(6);
    if count.saturating_mul(record) != c.buf.len() {
        return Err(malformed(
            MessageType::Samples,
            format!("{count} records of dimension {dim} do not fill {} bytes", c.buf.len()),
        ));
    }
    let mut transitions = Vec::with_capacity(count);
    for _ in 0..count {
        let state = c.f32s(dim)?;
        let action = c.u8()?;
        let reward = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
        let next_state = c.f32s(dim)?;
        let terminal = match c.u8()? {
            0 => false,
            1 => true,
            b => return Err(malformed(MessageType::Samples, format!("terminal byte {b}"))),
        };
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
        });
    }
    Ok(SampleBatchMsg {
        worker_id,
        batch_seq,
        model_step,
        transitions,
    })
}

/// Decodes the frame at the start of `buf`; returns the message and the
/// number of bytes it occupied.
pub fn decode_message(buf: &[u8]) -> Result<(Message, usize), WireError> {
    if buf.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            available: buf.len(),
        });
    }
    let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    check_len(len)?;
    if buf.len() < 4 + len {
        return Err(WireError::Truncated {
            needed: 4 + len,
            available: buf.len(),
        });
    }
    let msg = decode_body(&buf[4..4 + len])?;
    Ok((msg, 4 + len))
}

fn check_len(len: usize) -> Result<(), WireError> {
    if len > MAX_FRAME_LEN {
        Err(WireError::Oversize(len as u64))
    } else if len == 0 {
        Err(WireError::EmptyFrame)
    } else {
        Ok(())
    }
}

fn decode_body(body: &[u8]) -> Result<Message, WireError> {
    let kind = MessageType::from_byte(body[0]).ok_or(WireError::UnknownType(body[0]))?;
    let mut c = Cursor {
        kind,
        buf: &body[1..],
    };
    let msg = match kind {
        MessageType::Hello => Message::Hello { worker_id: c.u32()? },
        MessageType::Samples => Message::Samples(decode_samples(&mut c)?),
        MessageType::ModelRequest => Message::ModelRequest,
        MessageType::Model => Message::Model(c.take(c.buf.len())?.to_vec()),
        MessageType::Ack => Message::Ack(c.u8()?),
        MessageType::Shutdown => Message::Shutdown,
    };
    c.finish()?;
    Ok(msg)
}

/// Reads one frame. A stream that ends before the frame is complete yields
/// `Closed` (at a frame boundary) or `Truncated` (mid-frame); the partial
/// frame is dropped.
pub fn read_message(r: &mut impl Read) -> Result<Message, WireError> {
    let mut len_buf = [0u8; 4];
    let got = read_full(r, &mut len_buf)?;
    if got == 0 {
        return Err(WireError::Closed);
    }
    if got < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            available: got,
        });
    }
    let len = u32::from_le_bytes(len_buf) as usize;
    check_len(len)?;
    let mut body = vec![0u8; len];
    let got = read_full(r, &mut body)?;
    if got < len {
        return Err(WireError::Truncated {
            needed: 4 + len,
            available: 4 + got,
        });
    }
    decode_body(&body)
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), WireError> {
    w.write_all(&encode_message(msg)?)?;
    w.flush()?;
    Ok(())
}
