//! Explicit CIP-style client: tag read/write by name, request/response
//! matched by request id. One logical caller.

use thiserror::Error;

use crate::clock::Nanos;
use crate::plcsim::Publish;
use crate::transport::{Transport, TransportError};

use super::wire::{self, CipMessage, Status, WireError};

pub const DEFAULT_TIMEOUT: Nanos = crate::clock::millis(500);

#[derive(Debug, Error)]
pub enum CipClientError {
    #[error("timed out waiting for response")]
    Timeout,
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("tag {0:?} refuses writes (not Input-publish)")]
    Direction(String),
    #[error("server rejected the request as malformed")]
    RejectedMalformed,
    #[error("could not decode response: {0}")]
    Decode(#[from] WireError),
    #[error(transparent)]
    Transport(TransportError),
}

impl From<TransportError> for CipClientError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => CipClientError::Timeout,
            other => CipClientError::Transport(other),
        }
    }
}

fn status_err(status: Status, tag: &str) -> CipClientError {
    match status {
        Status::UnknownTag => CipClientError::UnknownTag(tag.to_string()),
        Status::Direction => CipClientError::Direction(tag.to_string()),
        _ => CipClientError::RejectedMalformed,
    }
}

enum Matched {
    Read { status: Status, value: f64 },
    Write { status: Status },
    List { tags: Vec<(String, Publish)> },
}

pub struct CipClient<T: Transport> {
    transport: T,
    next_req: u32,
    stash: Vec<(u32, Matched)>,
    timeout: Nanos,
    last_latency: Option<Nanos>,
}

impl<T: Transport> CipClient<T> {
    pub fn new(transport: T, timeout: Nanos) -> Self {
        Self {
            transport,
            next_req: 1,
            stash: Vec::new(),
            timeout,
            last_latency: None,
        }
    }

    pub fn now(&self) -> Nanos {
        self.transport.now()
    }

    pub fn last_latency(&self) -> Option<Nanos> {
        self.last_latency
    }

    fn alloc_req(&mut self) -> u32 {
        let id = self.next_req;
        self.next_req = self.next_req.wrapping_add(1);
        id
    }

    fn await_req(&mut self, req_id: u32, deadline: Nanos) -> Result<Matched, CipClientError> {
        if let Some(pos) = self.stash.iter().position(|(id, _)| *id == req_id) {
            return Ok(self.stash.swap_remove(pos).1);
        }
        loop {
            let payload = self.transport.recv_deadline(deadline)?;
            let matched = match wire::decode(&payload) {
                Ok(CipMessage::ReadResp {
                    req_id: id,
                    status,
                    value,
                }) => (id, Matched::Read { status, value }),
                Ok(CipMessage::WriteResp { req_id: id, status }) => (id, Matched::Write { status }),
                Ok(CipMessage::ListResp { req_id: id, tags }) => (id, Matched::List { tags }),
                // Link data and stray requests do not belong to this client.
                Ok(_) | Err(_) => continue,
            };
            if matched.0 == req_id {
                return Ok(matched.1);
            }
            if self.stash.len() >= 256 {
                self.stash.remove(0);
            }
            self.stash.push(matched);
        }
    }

    /// Current server-side value of a tag.
    pub fn read_tag(&mut self, name: &str) -> Result<f64, CipClientError> {
        let start = self.transport.now();
        let req_id = self.alloc_req();
        let msg = CipMessage::ReadReq {
            req_id,
            name: name.to_string(),
        };
        self.transport.send(&wire::encode(&msg)?)?;
        match self.await_req(req_id, start + self.timeout)? {
            Matched::Read {
                status: Status::Ok,
                value,
            } => {
                self.last_latency = Some(self.transport.now() - start);
                Ok(value)
            }
            Matched::Read { status, .. } => Err(status_err(status, name)),
            _ => Err(CipClientError::RejectedMalformed),
        }
    }

    /// Write a tag; only Input-publish tags accept network writes.
    pub fn write_tag(&mut self, name: &str, value: f64) -> Result<(), CipClientError> {
        let start = self.transport.now();
        let req_id = self.alloc_req();
        let msg = CipMessage::WriteReq {
            req_id,
            name: name.to_string(),
            value,
        };
        self.transport.send(&wire::encode(&msg)?)?;
        match self.await_req(req_id, start + self.timeout)? {
            Matched::Write { status: Status::Ok } => {
                self.last_latency = Some(self.transport.now() - start);
                Ok(())
            }
            Matched::Write { status } => Err(status_err(status, name)),
            _ => Err(CipClientError::RejectedMalformed),
        }
    }

    /// Published tags on the server, for item auto-creation.
    pub fn list_tags(&mut self) -> Result<Vec<(String, Publish)>, CipClientError> {
        let start = self.transport.now();
        let req_id = self.alloc_req();
        self.transport
            .send(&wire::encode(&CipMessage::ListReq { req_id })?)?;
        match self.await_req(req_id, start + self.timeout)? {
            Matched::List { tags } => Ok(tags),
            _ => Err(CipClientError::RejectedMalformed),
        }
    }

    /// Synchronous write-then-read cycle through two explicit round trips.
    pub fn cycle_sync(
        &mut self,
        write_tag: &str,
        read_tag: &str,
        value: f64,
    ) -> Result<f64, CipClientError> {
        let start = self.transport.now();
        self.write_tag(write_tag, value)?;
        let got = self.read_tag(read_tag)?;
        self.last_latency = Some(self.transport.now() - start);
        Ok(got)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::fake::FakeTransport;

    #[test]
    fn read_matches_request_id() {
        let inbound = vec![
            wire::encode(&CipMessage::ReadResp {
                req_id: 9,
                status: Status::Ok,
                value: 1.0,
            })
            .unwrap(),
            wire::encode(&CipMessage::ReadResp {
                req_id: 1,
                status: Status::Ok,
                value: 2.5,
            })
            .unwrap(),
        ];
        let mut c = CipClient::new(FakeTransport::new(inbound), 1_000_000);
        assert_eq!(c.read_tag("COut").unwrap(), 2.5);
        assert_eq!(c.stash.len(), 1); // the stray req 9 response
    }

    #[test]
    fn unknown_tag_surfaces_as_name_error() {
        let inbound = vec![wire::encode(&CipMessage::ReadResp {
            req_id: 1,
            status: Status::UnknownTag,
            value: 0.0,
        })
        .unwrap()];
        let mut c = CipClient::new(FakeTransport::new(inbound), 1_000_000);
        assert!(matches!(
            c.read_tag("NoSuchTag"),
            Err(CipClientError::UnknownTag(_))
        ));
    }

    #[test]
    fn direction_refusal_surfaces() {
        let inbound = vec![wire::encode(&CipMessage::WriteResp {
            req_id: 1,
            status: Status::Direction,
        })
        .unwrap()];
        let mut c = CipClient::new(FakeTransport::new(inbound), 1_000_000);
        assert!(matches!(
            c.write_tag("COut", 1.0),
            Err(CipClientError::Direction(_))
        ));
    }
}
