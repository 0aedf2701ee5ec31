//! scanbench: a scan-cycle PLC emulator, four ways to talk to it, and a
//! trial-based latency benchmark that compares them.
//!
//! The emulator copies its Input variable to its Output variable every task
//! period and serves three endpoints: FINS memory-area access, CIP-style
//! tag access (explicit and producer-consumer tag links), and a raw UDP
//! two-rung echo. An OPC-style polled gateway layers on top of the explicit
//! CIP client. The bench harness measures read, write and write/read-cycle
//! latencies per protocol and renders a comparison table.
//!
//! Everything runs in two modes: a deterministic discrete-event simulation
//! (fixed delays, seeded jitter, reproducible to the bit) and real loopback
//! UDP sockets on the wall clock.

pub mod bench;
pub mod ciplite;
pub mod clock;
pub mod config;
pub mod fins;
pub mod opcgw;
pub mod plcsim;
pub mod transport;
pub mod udplink;

pub use bench::cli_main;
