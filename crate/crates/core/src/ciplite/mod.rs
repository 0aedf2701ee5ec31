//! Simplified CIP-style communication: explicit tag read/write by name plus
//! implicit producer-consumer tag data links driven by an RPI.

pub mod client;
pub mod link;
pub mod wire;

pub use client::{CipClient, CipClientError, DEFAULT_TIMEOUT};
pub use link::{LinkCycleApi, LinkNode, LinkReadError, TagLink};
pub use wire::{CipMessage, LinkMessage, Status};
