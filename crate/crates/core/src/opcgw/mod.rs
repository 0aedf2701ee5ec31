//! OPC-style polled gateway over the explicit CIP client.
//!
//! Structure follows the Channel - Device - Item hierarchy: one channel (the
//! CIP driver), one device (the emulator endpoint) polled at a fixed scan
//! rate, and one item per published PLC variable. The gateway runs in
//! process with the benchmark harness; there is no separate wire protocol.
//!
//! The latency character comes from two rules: synchronous reads wait for
//! the next poll that starts after the call (never returning a cache from an
//! earlier epoch), while writes bypass the poll schedule entirely.

pub mod core;
pub mod loopback;

use thiserror::Error;

use crate::clock::Nanos;

pub use self::core::{GatewayCore, ItemState, PollCompletion, PollReport, Quality};
pub use self::loopback::{OpcLoopClient, OpcLoopToken};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OpcError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("item {0:?} has Bad quality after refresh")]
    Quality(String),
    #[error("gateway operation timed out")]
    Timeout,
    #[error("connection error: {0}")]
    Connection(String),
    #[error("remote error: {0}")]
    Remote(String),
}

/// Channel level of the hierarchy: names the network binding and driver.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub name: String,
    /// Interface the underlying explicit client binds through.
    pub interface: String,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            name: "channel1".into(),
            interface: "127.0.0.1".into(),
        }
    }
}

/// Device level: target endpoint plus the poll scan rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub name: String,
    /// host:port of the PLC's CIP endpoint (loopback mode only).
    pub address: String,
    /// Poll interval; every item is requested once per tick.
    pub scan_rate: Nanos,
}

impl DeviceConfig {
    pub fn new(address: &str, scan_rate: Nanos) -> Self {
        Self {
            name: "device1".into(),
            address: address.into(),
            scan_rate,
        }
    }
}

/// Completion handle of an asynchronous write, mode-independent view.
pub trait OpcToken {
    /// Non-blocking peek at the outcome.
    fn poll(&mut self) -> Option<Result<(), OpcError>>;
    /// Block (or pump, in simulation) until the outcome arrives.
    fn wait(&mut self, timeout: Nanos) -> Result<(), OpcError>;
}

/// The gateway operations the benchmark drives, implemented by both the
/// simulated and the loopback client.
pub trait OpcApi {
    type Token: OpcToken;

    fn read_sync(&mut self, item: &str) -> Result<f64, OpcError>;
    fn write_sync(&mut self, item: &str, value: f64) -> Result<(), OpcError>;
    fn write_async(&mut self, item: &str, value: f64) -> Self::Token;
    /// Async write then sync reads until the value echoes back.
    fn cycle(&mut self, write_item: &str, read_item: &str, value: f64) -> Result<f64, OpcError>;
    fn last_latency(&self) -> Option<Nanos>;
    fn now(&self) -> Nanos;
}

impl OpcToken for crate::plcsim::OpcSimToken {
    fn poll(&mut self) -> Option<Result<(), OpcError>> {
        crate::plcsim::OpcSimToken::poll(self)
    }

    fn wait(&mut self, timeout: Nanos) -> Result<(), OpcError> {
        crate::plcsim::OpcSimToken::wait(self, timeout)
    }
}

impl OpcApi for crate::plcsim::OpcSimClient {
    type Token = crate::plcsim::OpcSimToken;

    fn read_sync(&mut self, item: &str) -> Result<f64, OpcError> {
        crate::plcsim::OpcSimClient::read_sync(self, item)
    }

    fn write_sync(&mut self, item: &str, value: f64) -> Result<(), OpcError> {
        crate::plcsim::OpcSimClient::write_sync(self, item, value)
    }

    fn write_async(&mut self, item: &str, value: f64) -> Self::Token {
        crate::plcsim::OpcSimClient::write_async(self, item, value)
    }

    fn cycle(&mut self, write_item: &str, read_item: &str, value: f64) -> Result<f64, OpcError> {
        crate::plcsim::OpcSimClient::cycle(self, write_item, read_item, value)
    }

    fn last_latency(&self) -> Option<Nanos> {
        crate::plcsim::OpcSimClient::last_latency(self)
    }

    fn now(&self) -> Nanos {
        crate::plcsim::OpcSimClient::now(self)
    }
}
