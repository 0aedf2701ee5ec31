//! Deterministic PLC emulator: a scan-cycle scheduler over a variable
//! table with FINS, CIP-lite and raw-echo endpoints.
//!
//! Two execution modes share one emulator core: a simulated-delay message
//! channel with a simulated clock (reproducible property tests), and real
//! loopback sockets on the wall clock (honest latency measurement).

pub mod emulator;
pub mod loopback;
pub mod variable;
pub mod world;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clock::{millis, Nanos};

pub use emulator::{
    ClientAddr, Emulator, InboundMessage, LinkError, Outbound, ProtocolId, ScanReport, TagLinkSpec,
};
pub use loopback::{
    LinkedPairLoop, LoopbackConsumer, LoopbackPorts, LoopbackProducer, LoopbackServer, StartupError,
};
pub use variable::{ConfigError, Publish, ScanConfig, Variable, VariableSpec, VariableTable};
pub use world::{
    LinkEnds, LinkedPairSim, OpcSimClient, OpcSimToken, PcConsumerHandle, PcProducerHandle,
    ScanTotals, SimChannel, SimHarness, SimTransport,
};

/// Variable table plus scan schedule: everything the emulator core needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorConfig {
    pub variables: Vec<VariableSpec>,
    pub scan: ScanConfig,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        reference_fixture()
    }
}

/// The reference test fixture: two LREAL globals, CIn (Input publish, DM0)
/// and COut (Output publish, DM4), with CIn copied to COut every 1 ms scan.
pub fn reference_fixture() -> EmulatorConfig {
    EmulatorConfig {
        variables: vec![
            VariableSpec::new("CIn", 0, Publish::Input),
            VariableSpec::new("COut", 4, Publish::Output),
        ],
        scan: ScanConfig {
            task_period: millis(1),
            copy_rules: vec![("CIn".into(), "COut".into())],
        },
    }
}

/// How to run the emulator.
pub enum EmulatorMode {
    Simulated { channel: SimChannel, seed: u64 },
    Loopback { ports: LoopbackPorts },
}

#[derive(Debug, Error, PartialEq)]
pub enum ModeError {
    #[error("operation is only available in simulated mode")]
    RequiresSimulated,
}

/// Stop condition for [`EmulatorHandle::run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunUntil {
    Elapsed(Nanos),
    FinsRequestsServed(u64),
}

/// A running emulator in either mode.
pub enum EmulatorHandle {
    Sim(SimHarness),
    Loopback(LoopbackServer),
}

impl EmulatorHandle {
    /// Build and start an emulator. All variables begin at 0.0 and the scan
    /// clock at t = 0 (simulated) or server start (loopback).
    pub fn create(cfg: &EmulatorConfig, mode: EmulatorMode) -> Result<Self, StartupError> {
        match mode {
            EmulatorMode::Simulated { channel, seed } => Ok(EmulatorHandle::Sim(
                SimHarness::new(cfg, channel, seed).map_err(StartupError::Config)?,
            )),
            EmulatorMode::Loopback { ports } => Ok(EmulatorHandle::Loopback(
                LoopbackServer::start(cfg, ports, &[], &[], Instant::now(), false)?,
            )),
        }
    }

    /// Current simulated clock; errors in loopback mode.
    pub fn sim_now(&self) -> Result<Nanos, ModeError> {
        match self {
            EmulatorHandle::Sim(h) => Ok(h.now()),
            EmulatorHandle::Loopback(_) => Err(ModeError::RequiresSimulated),
        }
    }

    /// Run scans until the stop condition.
    pub fn run(&self, until: RunUntil) {
        match (self, until) {
            (EmulatorHandle::Sim(h), RunUntil::Elapsed(d)) => h.run_for(d),
            (EmulatorHandle::Sim(h), RunUntil::FinsRequestsServed(n)) => h.run_until_fins_served(n),
            (EmulatorHandle::Loopback(s), RunUntil::Elapsed(d)) => {
                s.run_for(Duration::from_nanos(d))
            }
            (EmulatorHandle::Loopback(s), RunUntil::FinsRequestsServed(n)) => {
                while s
                    .counters
                    .fins_served
                    .load(std::sync::atomic::Ordering::Relaxed)
                    < n
                {
                    std::thread::sleep(Duration::from_micros(200));
                }
            }
        }
    }

    /// Single-step one scan; simulated mode only.
    pub fn scan_step(&self) -> Result<ScanReport, ModeError> {
        match self {
            EmulatorHandle::Sim(h) => Ok(h.scan_step()),
            EmulatorHandle::Loopback(_) => Err(ModeError::RequiresSimulated),
        }
    }

    pub fn as_sim(&self) -> Option<&SimHarness> {
        match self {
            EmulatorHandle::Sim(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_loopback(&self) -> Option<&LoopbackServer> {
        match self {
            EmulatorHandle::Loopback(s) => Some(s),
            _ => None,
        }
    }
}
