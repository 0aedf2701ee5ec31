//! Compact datagram format for CIP-style tag access.
//!
//! Explicit messaging is request/response keyed by a 32-bit request id;
//! implicit messaging is a one-way `LinkData` datagram keyed by connection
//! id, not by destination address. This is deliberately not EtherNet/IP
//! encapsulation; only the tag-access semantics matter here.

use thiserror::Error;

use crate::plcsim::Publish;

const TYPE_READ_REQ: u8 = 1;
const TYPE_WRITE_REQ: u8 = 2;
const TYPE_READ_RESP: u8 = 3;
const TYPE_WRITE_RESP: u8 = 4;
const TYPE_LINK_DATA: u8 = 5;
const TYPE_LIST_REQ: u8 = 6;
const TYPE_LIST_RESP: u8 = 7;

pub const MAX_TAG_NAME: usize = 255;

/// Status byte carried by explicit responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    UnknownTag,
    /// Write refused: only Input-publish tags accept network writes.
    Direction,
    /// Server could not parse the request.
    Malformed,
}

impl Status {
    fn to_byte(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::UnknownTag => 1,
            Status::Direction => 2,
            Status::Malformed => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Status::Ok),
            1 => Some(Status::UnknownTag),
            2 => Some(Status::Direction),
            3 => Some(Status::Malformed),
            _ => None,
        }
    }
}

/// Cyclic producer->consumer payload. Sequence numbers are strictly
/// increasing per connection; consumers drop anything stale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMessage {
    pub connection_id: u32,
    pub sequence: u32,
    pub value: f64,
    /// Producer-side monotonic nanoseconds at publish time.
    pub produce_timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CipMessage {
    ReadReq {
        req_id: u32,
        name: String,
    },
    WriteReq {
        req_id: u32,
        name: String,
        value: f64,
    },
    ReadResp {
        req_id: u32,
        status: Status,
        value: f64,
    },
    WriteResp {
        req_id: u32,
        status: Status,
    },
    LinkData(LinkMessage),
    ListReq {
        req_id: u32,
    },
    ListResp {
        req_id: u32,
        tags: Vec<(String, Publish)>,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("empty datagram")]
    Empty,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated message at offset {0}")]
    Truncated(usize),
    #[error("trailing bytes after offset {0}")]
    Trailing(usize),
    #[error("tag name is not valid UTF-8")]
    BadName,
    #[error("tag name longer than {MAX_TAG_NAME} bytes")]
    NameTooLong,
    #[error("unknown status byte {0}")]
    BadStatus(u8),
    #[error("unknown publish byte {0}")]
    BadPublish(u8),
}

fn push_name(out: &mut Vec<u8>, name: &str) -> Result<(), WireError> {
    if name.len() > MAX_TAG_NAME {
        return Err(WireError::NameTooLong);
    }
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, WireError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(WireError::Truncated(self.pos))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(((self.u16()? as u32) << 16) | self.u16()? as u32)
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(((self.u32()? as u64) << 32) | self.u32()? as u64)
    }

    fn name(&mut self) -> Result<String, WireError> {
        let len = self.u8()? as usize;
        let end = self.pos + len;
        let raw = self
            .bytes
            .get(self.pos..end)
            .ok_or(WireError::Truncated(self.pos))?;
        self.pos = end;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::BadName)
    }

    fn finish(self) -> Result<(), WireError> {
        if self.pos != self.bytes.len() {
            return Err(WireError::Trailing(self.pos));
        }
        Ok(())
    }
}

fn publish_byte(p: Publish) -> u8 {
    match p {
        Publish::Input => 0,
        Publish::Output => 1,
        Publish::None => 2,
    }
}

fn publish_from(b: u8) -> Result<Publish, WireError> {
    match b {
        0 => Ok(Publish::Input),
        1 => Ok(Publish::Output),
        2 => Ok(Publish::None),
        other => Err(WireError::BadPublish(other)),
    }
}

pub fn encode(msg: &CipMessage) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(32);
    match msg {
        CipMessage::ReadReq { req_id, name } => {
            out.push(TYPE_READ_REQ);
            out.extend_from_slice(&req_id.to_be_bytes());
            push_name(&mut out, name)?;
        }
        CipMessage::WriteReq {
            req_id,
            name,
            value,
        } => {
            out.push(TYPE_WRITE_REQ);
            out.extend_from_slice(&req_id.to_be_bytes());
            out.extend_from_slice(&value.to_bits().to_be_bytes());
            push_name(&mut out, name)?;
        }
        CipMessage::ReadResp {
            req_id,
            status,
            value,
        } => {
            out.push(TYPE_READ_RESP);
            out.extend_from_slice(&req_id.to_be_bytes());
            out.push(status.to_byte());
            if *status == Status::Ok {
                out.extend_from_slice(&value.to_bits().to_be_bytes());
            }
        }
        CipMessage::WriteResp { req_id, status } => {
            out.push(TYPE_WRITE_RESP);
            out.extend_from_slice(&req_id.to_be_bytes());
            out.push(status.to_byte());
        }
        CipMessage::LinkData(m) => {
            out.push(TYPE_LINK_DATA);
            out.extend_from_slice(&m.connection_id.to_be_bytes());
            out.extend_from_slice(&m.sequence.to_be_bytes());
            out.extend_from_slice(&m.value.to_bits().to_be_bytes());
            out.extend_from_slice(&m.produce_timestamp.to_be_bytes());
        }
        CipMessage::ListReq { req_id } => {
            out.push(TYPE_LIST_REQ);
            out.extend_from_slice(&req_id.to_be_bytes());
        }
        CipMessage::ListResp { req_id, tags } => {
            out.push(TYPE_LIST_RESP);
            out.extend_from_slice(&req_id.to_be_bytes());
            out.extend_from_slice(&(tags.len() as u16).to_be_bytes());
            for (name, publish) in tags {
                out.push(publish_byte(*publish));
                push_name(&mut out, name)?;
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<CipMessage, WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let ty = r.u8().map_err(|_| WireError::Empty)?;
    let msg = match ty {
        TYPE_READ_REQ => {
            let req_id = r.u32()?;
            let name = r.name()?;
            CipMessage::ReadReq { req_id, name }
        }
        TYPE_WRITE_REQ => {
            let req_id = r.u32()?;
            let value = f64::from_bits(r.u64()?);
            let name = r.name()?;
            CipMessage::WriteReq {
                req_id,
                name,
                value,
            }
        }
        TYPE_READ_RESP => {
            let req_id = r.u32()?;
            let status =
                Status::from_byte(r.u8()?).ok_or_else(|| WireError::BadStatus(bytes[5]))?;
            let value = if status == Status::Ok {
                f64::from_bits(r.u64()?)
            } else {
                0.0
            };
            CipMessage::ReadResp {
                req_id,
                status,
                value,
            }
        }
        TYPE_WRITE_RESP => {
            let req_id = r.u32()?;
            let status = Status::from_byte(r.u8()?).ok_or(WireError::BadStatus(bytes[5]))?;
            CipMessage::WriteResp { req_id, status }
        }
        TYPE_LINK_DATA => {
            let connection_id = r.u32()?;
            let sequence = r.u32()?;
            let value = f64::from_bits(r.u64()?);
            let produce_timestamp = r.u64()?;
            CipMessage::LinkData(LinkMessage {
                connection_id,
                sequence,
                value,
                produce_timestamp,
            })
        }
        TYPE_LIST_REQ => CipMessage::ListReq { req_id: r.u32()? },
        TYPE_LIST_RESP => {
            let req_id = r.u32()?;
            let count = r.u16()?;
            let mut tags = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let publish = publish_from(r.u8()?)?;
                let name = r.name()?;
                tags.push((name, publish));
            }
            CipMessage::ListResp { req_id, tags }
        }
        other => return Err(WireError::UnknownType(other)),
    };
    r.finish()?;
    Ok(msg)
}
