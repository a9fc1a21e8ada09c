//! Length-prefixed binary frames.
//!
//! ```text
//! frame   := len:u32 header payload            (len counts header + payload)
//! header  := version:u16 msg_type:u8 origin:u8 round:u16
//! payload := route_len:u8 route:u8*
//!            [blocks_len:u32 block:u32*]       (shard messages only)
//!            matrix+
//! matrix  := rows:u32 cols:u32 f64*            (row-major)
//! ```
//!
//! All integers and floats are little-endian. `origin` is the sending node,
//! `round` the number of agencies whose hop has already been applied, and
//! `route` the agency order the message travels.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::keygen::AgencyId;
use crate::matrix::Mat;

pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 6;
/// Upper bound on a single frame, guarding allocation on corrupt input.
pub const MAX_FRAME_LEN: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    ShardPass = 1,
    ShardFinal = 2,
    FactorPass = 3,
    FactorFinal = 4,
    Estimate = 5,
    PlainEstimate = 6,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Self::ShardPass,
            2 => Self::ShardFinal,
            3 => Self::FactorPass,
            4 => Self::FactorFinal,
            5 => Self::Estimate,
            6 => Self::PlainEstimate,
            other => return Err(Error::Wire(format!("unknown message type {other}"))),
        })
    }

    fn is_shard(self) -> bool {
        matches!(self, Self::ShardPass | Self::ShardFinal)
    }

    fn matrix_count(self) -> usize {
        if self.is_shard() {
            2
        } else {
            1
        }
    }

    /// Whether the message is addressed to the cloud role.
    pub fn for_cloud(self) -> bool {
        matches!(self, Self::ShardFinal | Self::FactorFinal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub msg_type: MsgType,
    pub origin: u8,
    pub round: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub msg_type: MsgType,
    pub origin: u8,
    pub round: u16,
    pub route: Vec<AgencyId>,
    /// Orthogonal block layout; shard messages only.
    pub block_sizes: Vec<usize>,
    pub matrices: Vec<Mat>,
}

impl Message {
    pub fn header(&self) -> Header {
        Header {
            version: PROTOCOL_VERSION,
            msg_type: self.msg_type,
            origin: self.origin,
            round: self.round,
        }
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.matrices.len() != self.msg_type.matrix_count() {
            return Err(Error::Wire(format!(
                "{:?} carries {} matrices, expected {}",
                self.msg_type,
                self.matrices.len(),
                self.msg_type.matrix_count()
            )));
        }
        if self.route.len() > u8::MAX as usize {
            return Err(Error::Wire("route longer than 255".into()));
        }
        let mut out = vec![0u8; 4];
        out.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
        out.push(self.msg_type as u8);
        out.push(self.origin);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.push(self.route.len() as u8);
        out.extend(self.route.iter().map(|a| a.0));
        if self.msg_type.is_shard() {
            put_u32(&mut out, self.block_sizes.len())?;
            for &b in &self.block_sizes {
                put_u32(&mut out, b)?;
            }
        }
        for m in &self.matrices {
            put_u32(&mut out, m.rows())?;
            put_u32(&mut out, m.cols())?;
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let len = out.len() - 4;
        if len > MAX_FRAME_LEN {
            return Err(Error::Wire(format!("frame of {len} bytes exceeds limit")));
        }
        out[..4].copy_from_slice(&(len as u32).to_le_bytes());
        Ok(out)
    }

    /// Decodes a frame body (everything after the length prefix).
    pub fn decode_body(body: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: body, at: 0 };
        let version = cur.u16()?;
        if version != PROTOCOL_VERSION {
            return Err(Error::Wire(format!("unsupported protocol version {version}")));
        }
        let msg_type = MsgType::from_u8(cur.u8()?)?;
        let origin = cur.u8()?;
        let round = cur.u16()?;
        let route_len = cur.u8()? as usize;
        let route = cur.take(route_len)?.iter().map(|&b| AgencyId(b)).collect();
        let mut block_sizes = Vec::new();
        if msg_type.is_shard() {
            let n = cur.u32()? as usize;
            if n > body.len() {
                return Err(Error::Wire("block count exceeds frame".into()));
            }
            for _ in 0..n {
                block_sizes.push(cur.u32()? as usize);
            }
        }
        let mut matrices = Vec::with_capacity(msg_type.matrix_count());
        for _ in 0..msg_type.matrix_count() {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let count = rows
                .checked_mul(cols)
                .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= body.len()))
                .ok_or_else(|| Error::Wire(format!("matrix {rows}x{cols} exceeds frame")))?;
            let data = cur
                .take(count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            matrices.push(Mat::new(rows, cols, data).map_err(|e| Error::Wire(e.to_string()))?);
        }
        if cur.at != body.len() {
            return Err(Error::Wire(format!("{} trailing bytes", body.len() - cur.at)));
        }
        Ok(Message {
            msg_type,
            origin,
            round,
            route,
            block_sizes,
            matrices,
        })
    }

    /// Decodes a complete frame, length prefix included.
    pub fn decode(frame: &[u8]) -> Result<Self> {
        if frame.len() < 4 {
            return Err(Error::Wire("frame shorter than its length prefix".into()));
        }
        let len = u32::from_le_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
        if frame.len() != len + 4 {
            return Err(Error::Wire(format!("length prefix {len} but {} body bytes", frame.len() - 4)));
        }
        Self::decode_body(&frame[4..])
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Wire(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Wire("truncated frame".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads one frame body from a stream. `Ok(None)` on clean EOF.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::TransportFailure(e.to_string())),
    }
    let len = u32::from_le_bytes(len) as usize;
    if !(HEADER_LEN..=MAX_FRAME_LEN).contains(&len) {
        return Err(Error::Wire(format!("bad frame length {len}")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)
        .map_err(|e| Error::TransportFailure(format!("reading frame body: {e}")))?;
    Ok(Some(body))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> Result<()> {
    w.write_all(frame)
        .and_then(|_| w.flush())
        .map_err(|e| Error::TransportFailure(e.to_string()))
}
