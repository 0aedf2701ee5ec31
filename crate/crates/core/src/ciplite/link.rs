//! Tag data link configuration and the client-facing cyclic API.

use thiserror::Error;

use crate::clock::Nanos;

/// Which node a link endpoint lives on. Desk scale: one PLC, one PC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkNode {
    Plc,
    Pc,
}

/// Producer->consumer connection description. Link messages on the wire
/// carry the connection id, not consumer addresses.
#[derive(Debug, Clone, PartialEq)]
pub struct TagLink {
    pub connection_id: u32,
    pub producer: (LinkNode, String),
    pub consumers: Vec<(LinkNode, String)>,
    pub rpi: Nanos,
}

impl TagLink {
    pub fn new(
        connection_id: u32,
        producer: (LinkNode, &str),
        consumers: &[(LinkNode, &str)],
        rpi: Nanos,
    ) -> Self {
        Self {
            connection_id,
            producer: (producer.0, producer.1.to_string()),
            consumers: consumers.iter().map(|(n, t)| (*n, t.to_string())).collect(),
            rpi,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LinkReadError {
    #[error("no link message received yet")]
    NotReady,
    #[error("timed out waiting for the cycle to complete")]
    Timeout,
}

/// The linked (implicit messaging) operations the benchmark drives.
/// Implemented over both the simulated and the loopback link pair.
pub trait LinkCycleApi {
    /// Set the local producer tag; the value rides the next RPI emission.
    fn set_local(&mut self, value: f64);
    /// Local consumer copy and its staleness. Never blocks on the network.
    fn linked_read(&mut self) -> Result<(f64, Nanos), LinkReadError>;
    /// Write into the local producer tag, then wait until the value comes
    /// back through the remote copy chain. Records a cycle latency sample.
    fn linked_cycle(&mut self, value: f64) -> Result<f64, LinkReadError>;
    fn last_latency(&self) -> Option<Nanos>;
    fn now(&self) -> Nanos;
}
