//! Master/worker wire protocol.
//!
//! Every frame is a 4-byte big-endian payload length, a 1-byte message type
//! and the payload. Payload scalars are little-endian.
//!
//! | type | name      | payload                                                        |
//! |------|-----------|----------------------------------------------------------------|
//! | 0x01 | HELLO     | version u16, noise checksum u64, capacity u16                  |
//! | 0x02 | TASK      | generation u32, task id u32, seed count u16, seeds u32.., DGN1 |
//! | 0x03 | RESULT    | task id u32, fitness f64, bc count u16, bc f32.., frames u32   |
//! | 0x04 | HEARTBEAT | empty                                                          |
//! | 0x05 | SHUTDOWN  | empty                                                          |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::genome::{CodecError, Genotype};
use crate::noise::Seed;

pub const PROTOCOL_VERSION: u16 = 1;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
pub const HEADER_LEN: usize = 5;

const HELLO: u8 = 0x01;
const TASK: u8 = 0x02;
const RESULT: u8 = 0x03;
const HEARTBEAT: u8 = 0x04;
const SHUTDOWN: u8 = 0x05;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload length {declared} does not match a {kind} message")]
    LengthMismatch { kind: &'static str, declared: usize },
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("frame payload of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("episode seed {0} is out of range")]
    BadSeed(u32),
    #[error("genotype: {0}")]
    Genotype(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl WireError {
    pub fn code(&self) -> i32 {
        match self {
            WireError::Truncated { .. } => 20,
            WireError::LengthMismatch { .. } => 21,
            WireError::UnknownType(_) => 22,
            WireError::Oversize(_) => 23,
            WireError::BadSeed(_) => 24,
            WireError::Genotype(_) => 25,
            WireError::Io(_) => 26,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskMsg {
    pub generation: u32,
    pub task_id: u32,
    pub episode_seeds: Vec<Seed>,
    pub genotype: Genotype,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultMsg {
    pub task_id: u32,
    pub fitness: f64,
    pub bc: Vec<f32>,
    pub frames: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello {
        version: u16,
        checksum: u64,
        capacity: u16,
    },
    Task(TaskMsg),
    Result(ResultMsg),
    Heartbeat,
    Shutdown,
}

impl Message {
    fn kind(&self) -> u8 {
        match self {
            Message::Hello { .. } => HELLO,
            Message::Task(_) => TASK,
            Message::Result(_) => RESULT,
            Message::Heartbeat => HEARTBEAT,
            Message::Shutdown => SHUTDOWN,
        }
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = vec![0u8; HEADER_LEN];
    out[4] = msg.kind();
    match msg {
        Message::Hello {
            version,
            checksum,
            capacity,
        } => {
            out.extend_from_slice(&version.to_le_bytes());
            out.extend_from_slice(&checksum.to_le_bytes());
            out.extend_from_slice(&capacity.to_le_bytes());
        }
        Message::Task(t) => {
            out.extend_from_slice(&t.generation.to_le_bytes());
            out.extend_from_slice(&t.task_id.to_le_bytes());
            out.extend_from_slice(&(t.episode_seeds.len() as u16).to_le_bytes());
            for s in &t.episode_seeds {
                out.extend_from_slice(&s.value().to_le_bytes());
            }
            t.genotype.write_to(&mut out);
        }
        Message::Result(r) => {
            out.extend_from_slice(&r.task_id.to_le_bytes());
            out.extend_from_slice(&r.fitness.to_le_bytes());
            out.extend_from_slice(&(r.bc.len() as u16).to_le_bytes());
            for v in &r.bc {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&r.frames.to_le_bytes());
        }
        Message::Heartbeat | Message::Shutdown => {}
    }
    let len = (out.len() - HEADER_LEN) as u32;
    out[..4].copy_from_slice(&len.to_be_bytes());
    out
}

/// Decodes the frame at the start of `bytes`, returning the message and the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len));
    }
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            have: bytes.len(),
        });
    }
    Ok((decode_payload(bytes[4], &bytes[HEADER_LEN..total])?, total))
}

/// Decodes a buffer holding exactly one frame.
pub fn decode_exact(bytes: &[u8]) -> Result<Message, WireError> {
    let (msg, used) = decode(bytes)?;
    if used != bytes.len() {
        return Err(WireError::LengthMismatch {
            kind: "frame",
            declared: used - HEADER_LEN,
        });
    }
    Ok(msg)
}

struct Cursor<'a> {
    kind: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.mismatch());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    fn mismatch(&self) -> WireError {
        WireError::LengthMismatch {
            kind: self.kind,
            declared: self.bytes.len(),
        }
    }

    fn finish(self) -> Result<(), WireError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(self.mismatch())
        }
    }
}

fn decode_payload(kind: u8, payload: &[u8]) -> Result<Message, WireError> {
    let name = match kind {
        HELLO => "HELLO",
        TASK => "TASK",
        RESULT => "RESULT",
        HEARTBEAT => "HEARTBEAT",
        SHUTDOWN => "SHUTDOWN",
        other => return Err(WireError::UnknownType(other)),
    };
    let mut c = Cursor {
        kind: name,
        bytes: payload,
        pos: 0,
    };
    let msg = match kind {
        HELLO => Message::Hello {
            version: c.u16()?,
            checksum: c.u64()?,
            capacity: c.u16()?,
        },
        TASK => {
            let generation = c.u32()?;
            let task_id = c.u32()?;
            let n = c.u16()? as usize;
            let mut episode_seeds = Vec::with_capacity(n);
            for _ in 0..n {
                let v = c.u32()?;
                episode_seeds.push(Seed::new(v).map_err(|_| WireError::BadSeed(v))?);
            }
            let genotype = Genotype::from_bytes(c.rest())?;
            Message::Task(TaskMsg {
                generation,
                task_id,
                episode_seeds,
                genotype,
            })
        }
        RESULT => {
            let task_id = c.u32()?;
            let fitness = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
            let n = c.u16()? as usize;
            let bc = c
                .take(4 * n)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let frames = c.u32()?;
            Message::Result(ResultMsg {
                task_id,
                fitness,
                bc,
                frames,
            })
        }
        HEARTBEAT => Message::Heartbeat,
        _ => Message::Shutdown,
    };
    c.finish()?;
    Ok(msg)
}

/// Blocking read of one frame.
pub fn read_message(r: &mut impl Read) -> Result<Message, WireError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    decode_payload(header[4], &payload)
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}
