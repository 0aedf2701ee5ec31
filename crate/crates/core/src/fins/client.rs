//! FINS client: synchronous memory-area read/write plus the pipelined
//! write/read cycle that ignores the write acknowledgment.
//!
//! One logical caller at a time. Pipelining happens inside a call through
//! multiple outstanding sids; responses are matched by sid, never by
//! arrival position.

use thiserror::Error;

use crate::clock::Nanos;
use crate::plcsim::variable::{value_to_words, words_to_value, WORDS_PER_VARIABLE};
use crate::transport::{Transport, TransportError};

use super::frame::{
    self, decode_frame, encode_request, end_codes, FinsCommand, FinsFrame, FinsHeader, FinsRequest,
    FinsResponse,
};

pub const DEFAULT_TIMEOUT: Nanos = crate::clock::millis(500);

#[derive(Debug, Error)]
pub enum FinsClientError {
    #[error("timed out waiting for response")]
    Timeout,
    #[error("remote end code {0:#06x}")]
    Remote(u16),
    #[error("response payload of {got} words, expected {expected}")]
    PayloadSize { expected: usize, got: usize },
    #[error("could not decode response: {0}")]
    Decode(#[from] frame::DecodeError),
    #[error("could not encode request: {0}")]
    Encode(#[from] frame::EncodeError),
    #[error("too many outstanding requests")]
    TooManyOutstanding,
    #[error(transparent)]
    Transport(TransportError),
}

impl From<TransportError> for FinsClientError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => FinsClientError::Timeout,
            other => FinsClientError::Transport(other),
        }
    }
}

pub struct FinsClient<T: Transport> {
    transport: T,
    /// Source node of outgoing headers.
    sa1: u8,
    /// Destination node (the PLC).
    da1: u8,
    next_sid: u8,
    outstanding: usize,
    stash: Vec<FinsResponse>,
    timeout: Nanos,
    last_latency: Option<Nanos>,
}

impl<T: Transport> FinsClient<T> {
    pub fn new(transport: T, timeout: Nanos) -> Self {
        Self {
            transport,
            sa1: 1,
            da1: 0,
            next_sid: 1,
            outstanding: 0,
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

    /// Sids run 1..=255 and wrap, skipping 0.
    fn alloc_sid(&mut self) -> Result<u8, FinsClientError> {
        if self.outstanding >= 255 {
            return Err(FinsClientError::TooManyOutstanding);
        }
        let sid = self.next_sid;
        self.next_sid = if self.next_sid == 255 {
            1
        } else {
            self.next_sid + 1
        };
        self.outstanding += 1;
        Ok(sid)
    }

    fn send_read(&mut self, address: u16, count: u16) -> Result<u8, FinsClientError> {
        let sid = self.alloc_sid()?;
        let req = FinsRequest {
            header: FinsHeader::command(self.sa1, self.da1, sid),
            command: FinsCommand::MemoryAreaRead {
                area_code: frame::AREA_DM_WORD,
                address,
                bit: 0,
                count,
            },
        };
        self.transport.send(&encode_request(&req)?)?;
        Ok(sid)
    }

    fn send_write(&mut self, address: u16, words: &[u16]) -> Result<u8, FinsClientError> {
        let sid = self.alloc_sid()?;
        let req = FinsRequest {
            header: FinsHeader::command(self.sa1, self.da1, sid),
            command: FinsCommand::MemoryAreaWrite {
                area_code: frame::AREA_DM_WORD,
                address,
                bit: 0,
                count: words.len() as u16,
                words: words.to_vec(),
            },
        };
        self.transport.send(&encode_request(&req)?)?;
        Ok(sid)
    }

    /// Wait for the response carrying `sid`; responses for other outstanding
    /// sids are stashed for their own waiters.
    fn await_sid(&mut self, sid: u8, deadline: Nanos) -> Result<FinsResponse, FinsClientError> {
        if let Some(pos) = self.stash.iter().position(|r| r.header.sid == sid) {
            self.outstanding -= 1;
            return Ok(self.stash.swap_remove(pos));
        }
        loop {
            let payload = match self.transport.recv_deadline(deadline) {
                Ok(p) => p,
                Err(e) => {
                    self.outstanding = self.outstanding.saturating_sub(1);
                    return Err(e.into());
                }
            };
            match decode_frame(&payload) {
                Ok(FinsFrame::Response(resp)) => {
                    if resp.header.sid == sid {
                        self.outstanding -= 1;
                        return Ok(resp);
                    }
                    if self.stash.len() >= 256 {
                        self.stash.remove(0); // drop the oldest orphan
                    }
                    self.stash.push(resp);
                }
                // Anything that is not a well-formed response is dropped;
                // the pending sid will time out if nothing else arrives.
                Ok(FinsFrame::Request(_)) | Err(_) => {}
            }
        }
    }

    /// Read a variable's four DM words and reassemble the float.
    pub fn read_f64(&mut self, dm_address: u16) -> Result<f64, FinsClientError> {
        let start = self.transport.now();
        let sid = self.send_read(dm_address, WORDS_PER_VARIABLE)?;
        let resp = self.await_sid(sid, start + self.timeout)?;
        if resp.end_code != end_codes::NORMAL {
            return Err(FinsClientError::Remote(resp.end_code));
        }
        let value = words_to_value(&resp.payload).ok_or(FinsClientError::PayloadSize {
            expected: WORDS_PER_VARIABLE as usize,
            got: resp.payload.len(),
        })?;
        self.last_latency = Some(self.transport.now() - start);
        Ok(value)
    }

    /// Write a float into a variable's four DM words; success iff end code 0.
    pub fn write_f64(&mut self, dm_address: u16, value: f64) -> Result<(), FinsClientError> {
        let start = self.transport.now();
        let sid = self.send_write(dm_address, &value_to_words(value))?;
        let resp = self.await_sid(sid, start + self.timeout)?;
        if resp.end_code != end_codes::NORMAL {
            return Err(FinsClientError::Remote(resp.end_code));
        }
        self.last_latency = Some(self.transport.now() - start);
        Ok(())
    }

    /// Pipelined write/read cycle: the read goes out before the write's
    /// response arrives; the write acknowledgment is drained and discarded.
    pub fn cycle_pipelined(
        &mut self,
        write_address: u16,
        read_address: u16,
        value: f64,
    ) -> Result<f64, FinsClientError> {
        let start = self.transport.now();
        let deadline = start + self.timeout;
        let write_sid = self.send_write(write_address, &value_to_words(value))?;
        let read_sid = self.send_read(read_address, WORDS_PER_VARIABLE)?;
        let _ignored_write_ack = self.await_sid(write_sid, deadline)?;
        let resp = self.await_sid(read_sid, deadline)?;
        if resp.end_code != end_codes::NORMAL {
            return Err(FinsClientError::Remote(resp.end_code));
        }
        let got = words_to_value(&resp.payload).ok_or(FinsClientError::PayloadSize {
            expected: WORDS_PER_VARIABLE as usize,
            got: resp.payload.len(),
        })?;
        self.last_latency = Some(self.transport.now() - start);
        Ok(got)
    }

    /// Synchronous write-then-read cycle, for comparison with the pipelined
    /// path. Two full round trips.
    pub fn cycle_sync(
        &mut self,
        write_address: u16,
        read_address: u16,
        value: f64,
    ) -> Result<f64, FinsClientError> {
        let start = self.transport.now();
        self.write_f64(write_address, value)?;
        let got = self.read_f64(read_address)?;
        self.last_latency = Some(self.transport.now() - start);
        Ok(got)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::fake::FakeTransport;

    fn response(sid: u8, code: u16, end_code: u16, payload: Vec<u16>) -> Vec<u8> {
        frame::encode_response(&FinsResponse {
            header: FinsHeader::reply_to(&FinsHeader::command(1, 0, sid)),
            command_code: code,
            end_code,
            payload,
        })
        .unwrap()
    }

    #[test]
    fn sid_allocation_skips_zero_and_wraps() {
        let mut c = FinsClient::new(FakeTransport::new(vec![]), 1_000_000);
        c.next_sid = 254;
        assert_eq!(c.alloc_sid().unwrap(), 254);
        assert_eq!(c.alloc_sid().unwrap(), 255);
        assert_eq!(c.alloc_sid().unwrap(), 1);
        c.outstanding = 255;
        assert!(matches!(
            c.alloc_sid(),
            Err(FinsClientError::TooManyOutstanding)
        ));
    }

    #[test]
    fn responses_match_by_sid_not_arrival_order() {
        // Write ack (sid 1) and read response (sid 2) delivered reversed.
        let read_payload = value_to_words(6.5).to_vec();
        let inbound = vec![
            response(2, frame::CMD_MEMORY_AREA_READ, 0, read_payload),
            response(1, frame::CMD_MEMORY_AREA_WRITE, 0, vec![]),
        ];
        let mut c = FinsClient::new(FakeTransport::new(inbound), 1_000_000);
        let got = c.cycle_pipelined(0, 4, 6.5).unwrap();
        assert_eq!(got, 6.5);
        assert_eq!(c.outstanding, 0);
        assert!(c.stash.is_empty());
    }

    #[test]
    fn remote_end_code_becomes_remote_error() {
        let inbound = vec![response(1, frame::CMD_MEMORY_AREA_WRITE, 0x1103, vec![])];
        let mut c = FinsClient::new(FakeTransport::new(inbound), 1_000_000);
        match c.write_f64(900, 1.0) {
            Err(FinsClientError::Remote(0x1103)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timeout_when_nothing_arrives() {
        let mut c = FinsClient::new(FakeTransport::new(vec![]), 10_000);
        assert!(matches!(c.read_f64(4), Err(FinsClientError::Timeout)));
    }
}
