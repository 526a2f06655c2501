//! Frame layout for the TCP bus, little-endian throughout:
//!
//! ```text
//! offset size field
//! 0      2    magic "HB"
//! 2      1    version (1)
//! 3      1    kind (see FrameKind)
//! 4      8    seq u64
//! 12     8    stamp f64 seconds
//! 20     4    payload length u32
//! 24     2    topic length u16
//! 26     n    topic UTF-8
//! 26+n   m    payload
//! ```

use bytes::{Buf, BufMut, Bytes, BytesMut};
use std::io::{self, Read, Write};

pub const MAGIC: [u8; 2] = *b"HB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;
pub const MAX_PAYLOAD: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Data = 0,
    Advertise = 1,
    Subscribe = 2,
    Ack = 3,
    Error = 4,
}

impl FrameKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Data,
            1 => Self::Advertise,
            2 => Self::Subscribe,
            3 => Self::Ack,
            4 => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub seq: u64,
    pub stamp: f64,
    pub topic: String,
    pub payload: Bytes,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown frame kind {0}")]
    Kind(u8),
    #[error("payload of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("topic is not UTF-8")]
    Topic,
    #[error("truncated frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn data(topic: &str, seq: u64, stamp: f64, payload: Bytes) -> Self {
        Self { kind: FrameKind::Data, seq, stamp, topic: topic.to_string(), payload }
    }

    pub fn control(kind: FrameKind, topic: &str, payload: impl Into<Bytes>) -> Self {
        Self { kind, seq: 0, stamp: 0.0, topic: topic.to_string(), payload: payload.into() }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 2 + self.topic.len() + self.payload.len()
    }

    pub fn encode(&self) -> Bytes {
        let mut out = BytesMut::with_capacity(self.encoded_len());
        out.put_slice(&MAGIC);
        out.put_u8(VERSION);
        out.put_u8(self.kind as u8);
        out.put_u64_le(self.seq);
        out.put_f64_le(self.stamp);
        out.put_u32_le(self.payload.len() as u32);
        out.put_u16_le(self.topic.len() as u16);
        out.put_slice(self.topic.as_bytes());
        out.put_slice(&self.payload);
        out.freeze()
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, WireError> {
        if raw.len() < HEADER_LEN + 2 {
            return Err(WireError::Truncated);
        }
        let (kind, seq, stamp, len) = parse_header(&raw[..HEADER_LEN])?;
        raw.advance(HEADER_LEN);
        let topic_len = raw.get_u16_le() as usize;
        if raw.len() != topic_len + len {
            return Err(WireError::Truncated);
        }
        let topic = std::str::from_utf8(&raw[..topic_len]).map_err(|_| WireError::Topic)?.to_string();
        let payload = Bytes::copy_from_slice(&raw[topic_len..]);
        Ok(Self { kind, seq, stamp, topic, payload })
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, WireError> {
        let mut header = [0u8; HEADER_LEN + 2];
        r.read_exact(&mut header)?;
        let (kind, seq, stamp, len) = parse_header(&header[..HEADER_LEN])?;
        let topic_len = u16::from_le_bytes([header[HEADER_LEN], header[HEADER_LEN + 1]]) as usize;
        let mut topic = vec![0u8; topic_len];
        r.read_exact(&mut topic)?;
        let topic = String::from_utf8(topic).map_err(|_| WireError::Topic)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Self { kind, seq, stamp, topic, payload: Bytes::from(payload) })
    }
}

fn parse_header(mut h: &[u8]) -> Result<(FrameKind, u64, f64, usize), WireError> {
    let magic = [h[0], h[1]];
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[2] != VERSION {
        return Err(WireError::Version(h[2]));
    }
    let kind = FrameKind::from_u8(h[3]).ok_or(WireError::Kind(h[3]))?;
    h.advance(4);
    let seq = h.get_u64_le();
    let stamp = h.get_f64_le();
    let len = h.get_u32_le() as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    Ok((kind, seq, stamp, len))
}
