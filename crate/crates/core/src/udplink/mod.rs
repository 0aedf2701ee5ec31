//! Raw UDP value link: the thinnest client of the emulator's two-rung echo
//! endpoint. Datagrams are exactly 8 bytes, one big-endian IEEE-754 double;
//! anything else is rejected by both ends.
//!
//! Read/write semantics on a bare echo endpoint are a convention:
//! * `read_remote` sends the reserved [`QUERY_PATTERN`] NaN; the endpoint
//!   answers with the current value of its first Output-publish variable
//!   instead of echoing.
//! * `write_confirm` sends the value and waits for its echo as confirmation.
//! * `cycle` is the plain synchronous echo round trip.
//!
//! The reserved query pattern is the single bit pattern excluded from the
//! echo-identity guarantee.

use thiserror::Error;

use crate::clock::Nanos;
use crate::transport::{Transport, TransportError};

pub const PAYLOAD_LEN: usize = 8;

/// Quiet-NaN bit pattern reserved for read queries ("READRQ" payload).
pub const QUERY_PATTERN: u64 = 0x7FF8_5245_4144_5251;

#[derive(Debug, Error)]
pub enum UdpLinkError {
    #[error("timed out waiting for echo")]
    Timeout,
    #[error("datagram of {0} bytes is not a valid value payload")]
    Format(usize),
    #[error("echo mismatch: sent {sent:#018x}, got {got:#018x}")]
    EchoMismatch { sent: u64, got: u64 },
    #[error(transparent)]
    Transport(TransportError),
}

impl From<TransportError> for UdpLinkError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => UdpLinkError::Timeout,
            other => UdpLinkError::Transport(other),
        }
    }
}

pub fn encode_value(value: f64) -> [u8; PAYLOAD_LEN] {
    value.to_bits().to_be_bytes()
}

pub fn decode_value(payload: &[u8]) -> Result<f64, UdpLinkError> {
    let arr: [u8; PAYLOAD_LEN] = payload
        .try_into()
        .map_err(|_| UdpLinkError::Format(payload.len()))?;
    Ok(f64::from_bits(u64::from_be_bytes(arr)))
}

/// Synchronous echo client; never more than one datagram outstanding.
pub struct UdpLinkClient<T: Transport> {
    transport: T,
    timeout: Nanos,
    last_latency: Option<Nanos>,
}

impl<T: Transport> UdpLinkClient<T> {
    pub fn new(transport: T, timeout: Nanos) -> Self {
        Self {
            transport,
            timeout,
            last_latency: None,
        }
    }

    /// Latency of the most recent successful sampled operation.
    pub fn last_latency(&self) -> Option<Nanos> {
        self.last_latency
    }

    pub fn now(&self) -> Nanos {
        self.transport.now()
    }

    /// Fire one value datagram without waiting for anything.
    pub fn send(&mut self, value: f64) -> Result<(), UdpLinkError> {
        self.transport.send(&encode_value(value))?;
        Ok(())
    }

    /// Block for the next well-formed datagram.
    pub fn recv(&mut self, timeout: Nanos) -> Result<f64, UdpLinkError> {
        let deadline = self.transport.now() + timeout;
        let payload = self.transport.recv_deadline(deadline)?;
        decode_value(&payload)
    }

    /// Send, await the echo, return the decoded value. One cycle sample.
    pub fn cycle(&mut self, value: f64) -> Result<f64, UdpLinkError> {
        let start = self.transport.now();
        self.transport.send(&encode_value(value))?;
        let payload = self.transport.recv_deadline(start + self.timeout)?;
        let got = decode_value(&payload)?;
        self.last_latency = Some(self.transport.now() - start);
        Ok(got)
    }

    /// Solicit the endpoint's published value via the reserved query payload.
    pub fn read_remote(&mut self) -> Result<f64, UdpLinkError> {
        let start = self.transport.now();
        self.transport.send(&QUERY_PATTERN.to_be_bytes())?;
        let payload = self.transport.recv_deadline(start + self.timeout)?;
        let got = decode_value(&payload)?;
        self.last_latency = Some(self.transport.now() - start);
        Ok(got)
    }

    /// Send a value and treat its echo as the write confirmation.
    pub fn write_confirm(&mut self, value: f64) -> Result<(), UdpLinkError> {
        let got = self.cycle(value)?;
        if got.to_bits() != value.to_bits() {
            // With synchronous use the echo is always ours; a mismatch means
            // the channel is delivering someone else's traffic.
            return Err(UdpLinkError::EchoMismatch {
                sent: value.to_bits(),
                got: got.to_bits(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ieee_754_layout() {
        assert_eq!(
            encode_value(1.5),
            [0x3F, 0xF8, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]
        );
        assert_eq!(
            encode_value(-0.0),
            [0x80, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn short_payload_is_a_format_error() {
        assert!(matches!(
            decode_value(&[0u8; 7]),
            Err(UdpLinkError::Format(7))
        ));
        assert!(matches!(
            decode_value(&[0u8; 9]),
            Err(UdpLinkError::Format(9))
        ));
    }

    #[test]
    fn query_pattern_is_a_quiet_nan() {
        assert!(f64::from_bits(QUERY_PATTERN).is_nan());
    }
}
