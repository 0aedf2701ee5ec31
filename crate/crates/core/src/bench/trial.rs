//! Trial execution: per-protocol executors, the sequential trial loop, and
//! environment construction for both modes.
//!
//! Trials never overlap: the loop issues one operation, waits for its
//! completion (or failure), records the sample and only then starts the
//! next. Write and cycle trials consume a fresh nonce value each, so a
//! stale echo can never complete a later cycle.

use std::time::Instant;

use thiserror::Error;

use crate::ciplite::{CipClient, CipClientError, LinkCycleApi, LinkReadError};
use crate::clock::{millis, to_micros_round, Nanos};
use crate::fins::{FinsClient, FinsClientError};
use crate::opcgw::{OpcApi, OpcError, OpcLoopClient};
use crate::plcsim::{
    reference_fixture, EmulatorConfig, LinkedPairLoop, LoopbackConsumer, LoopbackPorts,
    LoopbackProducer, LoopbackServer, ProtocolId, Publish, SimChannel, SimHarness, StartupError,
    TagLinkSpec,
};
use crate::transport::{Transport, UdpTransport};
use crate::udplink::{UdpLinkClient, UdpLinkError};

use super::stats::{LatencySample, Outcome};

/// Protocol under test. `CipLinked` measures the implicit-messaging path;
/// plain `Cip` is the explicit request/response path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Protocol {
    Fins,
    Cip,
    CipLinked,
    Udp,
    Opc,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Fins => "FINS",
            Protocol::Cip => "CIP",
            Protocol::CipLinked => "CIP-linked",
            Protocol::Udp => "UDP",
            Protocol::Opc => "OPC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fins" => Some(Protocol::Fins),
            "cip" | "cip-explicit" => Some(Protocol::Cip),
            "cip-linked" | "linked" => Some(Protocol::CipLinked),
            "udp" => Some(Protocol::Udp),
            "opc" => Some(Protocol::Opc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TrialKind {
    Read,
    Write,
    Cycle,
}

impl TrialKind {
    pub fn label(self) -> &'static str {
        match self {
            TrialKind::Read => "read",
            TrialKind::Write => "write",
            TrialKind::Cycle => "cycle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "read" => Some(TrialKind::Read),
            "write" => Some(TrialKind::Write),
            "cycle" => Some(TrialKind::Cycle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Simulated,
    Loopback,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Simulated => "sim",
            Mode::Loopback => "loopback",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sim" | "simulated" => Some(Mode::Simulated),
            "loopback" | "loop" => Some(Mode::Loopback),
            _ => None,
        }
    }
}

/// Everything one benchmark cell needs.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub protocol: Protocol,
    pub kind: TrialKind,
    pub mode: Mode,
    pub trials: u64,
    /// Leading trials excluded from statistics.
    pub warmup: u64,
    pub seed: u64,
    /// FINS cycle flavour: pipelined (read issued before the write ack).
    pub pipelined: bool,
    pub fixture: EmulatorConfig,
    pub channel: SimChannel,
    /// Tag link RPI.
    pub rpi: Nanos,
    /// Gateway poll interval.
    pub scan_rate: Nanos,
    /// Per-operation timeout.
    pub timeout: Nanos,
    /// Loopback mode ports (0 = ephemeral).
    pub ports: LoopbackPorts,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Fins,
            kind: TrialKind::Cycle,
            mode: Mode::Simulated,
            trials: 100_000,
            warmup: 1_000,
            seed: 42,
            pipelined: true,
            fixture: reference_fixture(),
            channel: SimChannel::default(),
            rpi: millis(1),
            scan_rate: millis(10),
            timeout: millis(500),
            ports: LoopbackPorts::AUTO,
        }
    }
}

impl BenchConfig {
    /// Input/output tag pair the trials exercise: the first Input-publish
    /// and the first Output-publish variable of the fixture.
    pub fn tag_pair(
        &self,
    ) -> Result<(crate::plcsim::VariableSpec, crate::plcsim::VariableSpec), RunError> {
        let input = self
            .fixture
            .variables
            .iter()
            .find(|v| v.publish == Publish::Input)
            .cloned()
            .ok_or_else(|| RunError::Setup("fixture has no Input-publish variable".into()))?;
        let output = self
            .fixture
            .variables
            .iter()
            .find(|v| v.publish == Publish::Output)
            .cloned()
            .ok_or_else(|| RunError::Setup("fixture has no Output-publish variable".into()))?;
        Ok((input, output))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("environment setup failed: {0}")]
    Setup(String),
    #[error("startup failed: {0}")]
    Startup(#[from] StartupError),
    #[error(
        "run aborted: {non_ok} of {executed} operations failed (threshold {threshold}); last: {last_error}"
    )]
    Aborted {
        executed: u64,
        non_ok: u64,
        threshold: u64,
        last_error: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrialFailure {
    pub outcome: Outcome,
    pub detail: String,
}

impl TrialFailure {
    fn timeout(detail: impl Into<String>) -> Self {
        Self {
            outcome: Outcome::Timeout,
            detail: detail.into(),
        }
    }

    fn error(detail: impl Into<String>) -> Self {
        Self {
            outcome: Outcome::Error,
            detail: detail.into(),
        }
    }
}

/// One benchmarkable operation. `run_once` performs a complete operation
/// and reports the client-recorded latency (send to response decode).
pub trait TrialExec {
    fn run_once(&mut self, nonce: f64) -> Result<Nanos, TrialFailure>;
    /// Monotonic clock of the underlying transport, for overlap accounting.
    fn now(&self) -> Nanos;
}

/// Output of one run: samples in trial order plus run metadata.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub samples: Vec<LatencySample>,
    pub warmup_executed: u64,
    pub warmup_non_ok: u64,
    /// (start, end) per measured trial on the executor's clock.
    pub intervals: Vec<(Nanos, Nanos)>,
    pub clock_resolution_ns: u64,
}

/// Per-trial unique values; exact integers so every nonce has a distinct
/// bit pattern and round-trips bit-exactly.
pub struct NonceSeq {
    next: u64,
    base: f64,
}

impl NonceSeq {
    pub fn new(seed: u64) -> Self {
        Self {
            next: 0,
            base: 1.0e6 + (seed % 9973) as f64 * 1.0e7,
        }
    }

    pub fn next_value(&mut self) -> f64 {
        let v = self.base + self.next as f64;
        self.next += 1;
        v
    }
}

/// The sequential trial loop shared by every protocol and mode.
pub fn run_with_exec(cfg: &BenchConfig, exec: &mut dyn TrialExec) -> Result<RunOutput, RunError> {
    let planned = cfg.warmup + cfg.trials;
    let threshold = (planned / 100).max(1);
    let mut nonces = NonceSeq::new(cfg.seed);
    let mut non_ok = 0u64;
    let mut warmup_non_ok = 0u64;
    let mut samples = Vec::with_capacity(cfg.trials as usize);
    let mut intervals = Vec::with_capacity(cfg.trials as usize);

    for i in 0..planned {
        let measured = i >= cfg.warmup;
        let nonce = nonces.next_value();
        let start = exec.now();
        let result = exec.run_once(nonce);
        let end = exec.now();
        match result {
            Ok(latency_ns) => {
                if measured {
                    let idx = i - cfg.warmup;
                    samples.push(LatencySample::ok(idx, to_micros_round(latency_ns)));
                    intervals.push((start, end));
                }
            }
            Err(failure) => {
                non_ok += 1;
                if measured {
                    let idx = i - cfg.warmup;
                    samples.push(LatencySample::failed(idx, failure.outcome));
                    intervals.push((start, end));
                } else {
                    warmup_non_ok += 1;
                }
                if non_ok > threshold {
                    return Err(RunError::Aborted {
                        executed: i + 1,
                        non_ok,
                        threshold,
                        last_error: failure.detail,
                    });
                }
            }
        }
    }
    Ok(RunOutput {
        samples,
        warmup_executed: cfg.warmup,
        warmup_non_ok,
        intervals,
        clock_resolution_ns: match cfg.mode {
            Mode::Simulated => 1,
            Mode::Loopback => crate::clock::wall_clock_resolution_ns(),
        },
    })
}

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------

fn fins_failure(e: FinsClientError) -> TrialFailure {
    match e {
        FinsClientError::Timeout => TrialFailure::timeout("fins timeout"),
        other => TrialFailure::error(other.to_string()),
    }
}

fn cip_failure(e: CipClientError) -> TrialFailure {
    match e {
        CipClientError::Timeout => TrialFailure::timeout("cip timeout"),
        other => TrialFailure::error(other.to_string()),
    }
}

fn udp_failure(e: UdpLinkError) -> TrialFailure {
    match e {
        UdpLinkError::Timeout => TrialFailure::timeout("udp timeout"),
        other => TrialFailure::error(other.to_string()),
    }
}

fn link_failure(e: LinkReadError) -> TrialFailure {
    match e {
        LinkReadError::Timeout => TrialFailure::timeout("link timeout"),
        other => TrialFailure::error(other.to_string()),
    }
}

fn opc_failure(e: OpcError) -> TrialFailure {
    match e {
        OpcError::Timeout => TrialFailure::timeout("opc timeout"),
        other => TrialFailure::error(other.to_string()),
    }
}

struct FinsExec<T: Transport> {
    client: FinsClient<T>,
    kind: TrialKind,
    pipelined: bool,
    write_addr: u16,
    read_addr: u16,
}

impl<T: Transport> TrialExec for FinsExec<T> {
    fn run_once(&mut self, nonce: f64) -> Result<Nanos, TrialFailure> {
        let r = match (self.kind, self.pipelined) {
            (TrialKind::Read, _) => self.client.read_f64(self.read_addr).map(|_| ()),
            (TrialKind::Write, _) => self.client.write_f64(self.write_addr, nonce),
            (TrialKind::Cycle, true) => self
                .client
                .cycle_pipelined(self.write_addr, self.read_addr, nonce)
                .map(|_| ()),
            (TrialKind::Cycle, false) => self
                .client
                .cycle_sync(self.write_addr, self.read_addr, nonce)
                .map(|_| ()),
        };
        r.map_err(fins_failure)?;
        Ok(self.client.last_latency().expect("latency recorded"))
    }

    fn now(&self) -> Nanos {
        self.client.now()
    }
}

struct CipExplicitExec<T: Transport> {
    client: CipClient<T>,
    kind: TrialKind,
    write_tag: String,
    read_tag: String,
}

impl<T: Transport> TrialExec for CipExplicitExec<T> {
    fn run_once(&mut self, nonce: f64) -> Result<Nanos, TrialFailure> {
        let r = match self.kind {
            TrialKind::Read => self.client.read_tag(&self.read_tag).map(|_| ()),
            TrialKind::Write => self.client.write_tag(&self.write_tag, nonce),
            TrialKind::Cycle => self
                .client
                .cycle_sync(&self.write_tag, &self.read_tag, nonce)
                .map(|_| ()),
        };
        r.map_err(cip_failure)?;
        Ok(self.client.last_latency().expect("latency recorded"))
    }

    fn now(&self) -> Nanos {
        self.client.now()
    }
}

struct LinkedExec<L: LinkCycleApi> {
    pair: L,
    kind: TrialKind,
}

impl<L: LinkCycleApi> TrialExec for LinkedExec<L> {
    fn run_once(&mut self, nonce: f64) -> Result<Nanos, TrialFailure> {
        match self.kind {
            TrialKind::Read => {
                // Local copy read: completes immediately by design.
                let start = self.pair.now();
                self.pair.linked_read().map_err(link_failure)?;
                Ok(self.pair.now() - start)
            }
            TrialKind::Write => {
                let start = self.pair.now();
                self.pair.set_local(nonce);
                Ok(self.pair.now() - start)
            }
            TrialKind::Cycle => {
                self.pair.linked_cycle(nonce).map_err(link_failure)?;
                Ok(self.pair.last_latency().expect("latency recorded"))
            }
        }
    }

    fn now(&self) -> Nanos {
        self.pair.now()
    }
}

struct UdpExec<T: Transport> {
    client: UdpLinkClient<T>,
    kind: TrialKind,
}

impl<T: Transport> TrialExec for UdpExec<T> {
    fn run_once(&mut self, nonce: f64) -> Result<Nanos, TrialFailure> {
        let r = match self.kind {
            TrialKind::Read => self.client.read_remote().map(|_| ()),
            TrialKind::Write => self.client.write_confirm(nonce),
            TrialKind::Cycle => self.client.cycle(nonce).map(|_| ()),
        };
        r.map_err(udp_failure)?;
        Ok(self.client.last_latency().expect("latency recorded"))
    }

    fn now(&self) -> Nanos {
        self.client.now()
    }
}

struct OpcExec<O: OpcApi> {
    client: O,
    kind: TrialKind,
    write_item: String,
    read_item: String,
}

impl<O: OpcApi> TrialExec for OpcExec<O> {
    fn run_once(&mut self, nonce: f64) -> Result<Nanos, TrialFailure> {
        let r = match self.kind {
            TrialKind::Read => self.client.read_sync(&self.read_item).map(|_| ()),
            TrialKind::Write => self.client.write_sync(&self.write_item, nonce),
            TrialKind::Cycle => self
                .client
                .cycle(&self.write_item, &self.read_item, nonce)
                .map(|_| ()),
        };
        r.map_err(opc_failure)?;
        Ok(self.client.last_latency().expect("latency recorded"))
    }

    fn now(&self) -> Nanos {
        self.client.now()
    }
}

// ---------------------------------------------------------------------------
// Environment construction
// ---------------------------------------------------------------------------

/// Connection ids of the standard cyclic link pair.
pub const LINK_PC_TO_PLC: u32 = 1;
pub const LINK_PLC_TO_PC: u32 = 2;

/// Build a simulated-mode executor for one cell. The returned executor owns
/// (via reference counting) the whole simulated world.
pub fn build_sim_exec(cfg: &BenchConfig) -> Result<Box<dyn TrialExec>, RunError> {
    let harness = SimHarness::new(&cfg.fixture, cfg.channel.clone(), cfg.seed)
        .map_err(|e| RunError::Setup(e.to_string()))?;
    let (input, output) = cfg.tag_pair()?;
    match cfg.protocol {
        Protocol::Fins => Ok(Box::new(FinsExec {
            client: FinsClient::new(harness.transport(ProtocolId::Fins), cfg.timeout),
            kind: cfg.kind,
            pipelined: cfg.pipelined,
            write_addr: input.dm_address,
            read_addr: output.dm_address,
        })),
        Protocol::Cip => Ok(Box::new(CipExplicitExec {
            client: CipClient::new(harness.transport(ProtocolId::Cip), cfg.timeout),
            kind: cfg.kind,
            write_tag: input.name,
            read_tag: output.name,
        })),
        Protocol::CipLinked => {
            let mut pair = harness
                .linked_pair(
                    LINK_PC_TO_PLC,
                    LINK_PLC_TO_PC,
                    &input.name,
                    &output.name,
                    cfg.rpi,
                    cfg.timeout,
                )
                .map_err(|e| RunError::Setup(e.to_string()))?;
            prime_link(&mut pair, cfg.timeout).map_err(|e| RunError::Setup(e.to_string()))?;
            Ok(Box::new(LinkedExec {
                pair,
                kind: cfg.kind,
            }))
        }
        Protocol::Udp => Ok(Box::new(UdpExec {
            client: UdpLinkClient::new(harness.transport(ProtocolId::Raw), cfg.timeout),
            kind: cfg.kind,
        })),
        Protocol::Opc => {
            let client = harness
                .opc_connect(cfg.scan_rate, cfg.timeout)
                .map_err(|e| RunError::Setup(e.to_string()))?;
            Ok(Box::new(OpcExec {
                client,
                kind: cfg.kind,
                write_item: input.name,
                read_item: output.name,
            }))
        }
    }
}

/// Wait for the first link message so trial one starts from a ready link.
fn prime_link<L: LinkCycleApi>(pair: &mut L, timeout: Nanos) -> Result<(), LinkReadError> {
    let deadline = pair.now() + timeout;
    loop {
        match pair.linked_read() {
            Ok(_) => return Ok(()),
            Err(LinkReadError::NotReady) => {
                if pair.now() >= deadline {
                    return Err(LinkReadError::Timeout);
                }
                // A cycle with a throwaway value advances the world (sim) or
                // just burns a moment (loopback).
                let _ = pair.linked_cycle(f64::from_bits(0x0000_0000_0000_0001));
            }
            Err(e) => return Err(e),
        }
    }
}

/// A loopback emulator with the standard link pair pre-wired, shared by the
/// cells of one comparison run.
pub struct LoopbackFixture {
    pub server: LoopbackServer,
    epoch: Instant,
    linked: Option<LinkedPairLoop>,
    input: crate::plcsim::VariableSpec,
    output: crate::plcsim::VariableSpec,
}

impl LoopbackFixture {
    pub fn start(cfg: &BenchConfig) -> Result<Self, RunError> {
        let (input, output) = cfg.tag_pair()?;
        let epoch = Instant::now();
        let consumer = LoopbackConsumer::bind(LINK_PLC_TO_PC, epoch)
            .map_err(|e| RunError::Setup(e.to_string()))?;
        let producer_links = vec![TagLinkSpec {
            connection_id: LINK_PLC_TO_PC,
            producer_tag: output.name.clone(),
            consumers: vec![crate::plcsim::ClientAddr::Net(consumer.addr())],
            rpi: cfg.rpi,
        }];
        let consumer_links = vec![(LINK_PC_TO_PLC, input.name.clone())];
        let server = LoopbackServer::start(
            &cfg.fixture,
            cfg.ports,
            &consumer_links,
            &producer_links,
            epoch,
            false,
        )?;
        let producer = LoopbackProducer::start(LINK_PC_TO_PLC, server.cip_addr, cfg.rpi, epoch)
            .map_err(|e| RunError::Setup(e.to_string()))?;
        let linked = LinkedPairLoop::new(producer, consumer, cfg.timeout, epoch);
        Ok(Self {
            server,
            epoch,
            linked: Some(linked),
            input,
            output,
        })
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    pub fn build_exec(&mut self, cfg: &BenchConfig) -> Result<Box<dyn TrialExec>, RunError> {
        let setup = |e: std::io::Error| RunError::Setup(e.to_string());
        match cfg.protocol {
            Protocol::Fins => Ok(Box::new(FinsExec {
                client: FinsClient::new(
                    UdpTransport::connect(self.server.fins_addr, self.epoch).map_err(setup)?,
                    cfg.timeout,
                ),
                kind: cfg.kind,
                pipelined: cfg.pipelined,
                write_addr: self.input.dm_address,
                read_addr: self.output.dm_address,
            })),
            Protocol::Cip => Ok(Box::new(CipExplicitExec {
                client: CipClient::new(
                    UdpTransport::connect(self.server.cip_addr, self.epoch).map_err(setup)?,
                    cfg.timeout,
                ),
                kind: cfg.kind,
                write_tag: self.input.name.clone(),
                read_tag: self.output.name.clone(),
            })),
            Protocol::CipLinked => {
                let mut pair = self
                    .linked
                    .take()
                    .ok_or_else(|| RunError::Setup("linked pair already in use".into()))?;
                prime_link(&mut pair, cfg.timeout).map_err(|e| RunError::Setup(e.to_string()))?;
                Ok(Box::new(LinkedExec {
                    pair,
                    kind: cfg.kind,
                }))
            }
            Protocol::Udp => Ok(Box::new(UdpExec {
                client: UdpLinkClient::new(
                    UdpTransport::connect(self.server.raw_addr, self.epoch).map_err(setup)?,
                    cfg.timeout,
                ),
                kind: cfg.kind,
            })),
            Protocol::Opc => {
                let client = OpcLoopClient::connect(
                    self.server.cip_addr,
                    cfg.scan_rate,
                    cfg.timeout,
                    self.epoch,
                )
                .map_err(|e| RunError::Setup(e.to_string()))?;
                Ok(Box::new(OpcExec {
                    client,
                    kind: cfg.kind,
                    write_item: self.input.name.clone(),
                    read_item: self.output.name.clone(),
                }))
            }
        }
    }
}

/// Run one benchmark cell end to end, constructing its environment.
pub fn run_trials(cfg: &BenchConfig) -> Result<RunOutput, RunError> {
    match cfg.mode {
        Mode::Simulated => {
            let mut exec = build_sim_exec(cfg)?;
            run_with_exec(cfg, exec.as_mut())
        }
        Mode::Loopback => {
            let mut fixture = LoopbackFixture::start(cfg)?;
            let mut exec = fixture.build_exec(cfg)?;
            let out = run_with_exec(cfg, exec.as_mut());
            drop(exec);
            out
        }
    }
}
