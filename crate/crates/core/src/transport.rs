//! Datagram transport abstraction shared by all protocol clients.
//!
//! Two implementations exist: [`crate::plcsim::SimTransport`], which routes
//! messages through the deterministic simulated channel, and [`UdpTransport`]
//! over real loopback sockets. Clients are written once against this trait.

use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clock::Nanos;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("receive timed out")]
    Timeout,
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

/// One client endpoint of a datagram flow.
///
/// `recv_deadline` blocks until a datagram arrives or `deadline` (on this
/// transport's own clock) passes. In simulated mode "blocking" means pumping
/// the event loop, so time only advances through the simulation.
pub trait Transport {
    fn send(&mut self, payload: &[u8]) -> Result<(), TransportError>;
    fn recv_deadline(&mut self, deadline: Nanos) -> Result<Vec<u8>, TransportError>;
    /// Current time on this transport's monotonic clock, in nanoseconds.
    fn now(&self) -> Nanos;
}

/// Client transport over a real UDP socket bound to an ephemeral port.
pub struct UdpTransport {
    socket: UdpSocket,
    peer: SocketAddr,
    epoch: Instant,
}

impl UdpTransport {
    pub fn connect(peer: SocketAddr, epoch: Instant) -> std::io::Result<Self> {
        let socket = UdpSocket::bind(("127.0.0.1", 0))?;
        Ok(Self {
            socket,
            peer,
            epoch,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.socket.local_addr()
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, payload: &[u8]) -> Result<(), TransportError> {
        self.socket.send_to(payload, self.peer)?;
        Ok(())
    }

    fn recv_deadline(&mut self, deadline: Nanos) -> Result<Vec<u8>, TransportError> {
        let mut buf = [0u8; 2048];
        loop {
            let now = self.now();
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            self.socket
                .set_read_timeout(Some(Duration::from_nanos(deadline - now)))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, from)) => {
                    if from == self.peer {
                        return Ok(buf[..n].to_vec());
                    }
                    // Stray datagram from another sender; keep waiting.
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Err(TransportError::Timeout);
                }
                Err(e) => return Err(TransportError::Io(e)),
            }
        }
    }

    fn now(&self) -> Nanos {
        self.epoch.elapsed().as_nanos() as Nanos
    }
}
