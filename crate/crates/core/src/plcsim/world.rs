//! Deterministic discrete-event simulation of the emulator, the message
//! channel and the PC-side endpoints (protocol clients, link producers and
//! consumers, the polling gateway).
//!
//! The whole simulated system lives in one `SimWorld` behind an
//! `Rc<RefCell<..>>`. Client handles are thin: their blocking calls pump the
//! event loop until a condition holds, so simulated time only advances
//! through the simulation and runs are bit-reproducible for a fixed seed.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::VecDeque;
use std::rc::Rc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::ciplite::wire::{self, CipMessage, LinkMessage, Status};
use crate::clock::{millis, Nanos};
use crate::opcgw::core::{GatewayCore, PollReport, Quality};
use crate::opcgw::OpcError;
use crate::plcsim::emulator::{
    ClientAddr, Emulator, InboundMessage, Outbound, ProtocolId, ScanReport, TagLinkSpec,
};
use crate::plcsim::variable::{ConfigError, Publish};
use crate::plcsim::EmulatorConfig;
use crate::transport::{Transport, TransportError};

/// Simulated channel parameters. Delivery time of a datagram is
/// `send + one_way_delay + jitter`, plus the per-protocol server overhead on
/// the server->client leg. Messages between a fixed sender/receiver pair are
/// delivered in send order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimChannel {
    pub one_way_delay: Nanos,
    /// Uniform jitter in [0, jitter] added per delivery. Zero by default.
    pub jitter: Nanos,
    /// Extra server-side response delay per protocol, indexed like
    /// [`ProtocolId::index`]. Zero by default; a calibration knob.
    pub server_overhead: [Nanos; 3],
}

impl Default for SimChannel {
    fn default() -> Self {
        Self {
            one_way_delay: millis(1),
            jitter: 0,
            server_overhead: [0; 3],
        }
    }
}

impl SimChannel {
    pub fn with_delay(one_way_delay: Nanos) -> Self {
        Self {
            one_way_delay,
            ..Self::default()
        }
    }
}

#[derive(Debug)]
enum EventKind {
    ToEmulator {
        proto: ProtocolId,
        client: u32,
        payload: Vec<u8>,
    },
    ToClient {
        client: u32,
        payload: Vec<u8>,
    },
    PcProduce {
        producer: usize,
    },
    GatewayTick,
}

struct Event {
    at: Nanos,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

enum ClientKind {
    /// Plain protocol client: deliveries land in its inbox.
    Inbox,
    /// PC-side link consumer cell.
    Consumer(usize),
    /// The gateway's explicit-messaging endpoint.
    Gateway,
}

/// Last received link message on a PC-side consumer.
#[derive(Debug, Clone, Copy)]
struct ConsumerState {
    connection_id: u32,
    last: Option<ConsumerSample>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConsumerSample {
    pub value_bits: u64,
    pub sequence: u32,
    pub produce_timestamp: Nanos,
}

struct PcProducer {
    connection_id: u32,
    client: u32,
    value_bits: u64,
    sequence: u32,
    rpi: Nanos,
}

enum PendingGatewayReq {
    PollItem(usize),
    SyncWrite,
    AsyncWrite(usize),
    List,
}

struct GatewaySim {
    core: GatewayCore,
    client: u32,
    next_req: u32,
    pending: Vec<(u32, PendingGatewayReq)>,
    sync_write_result: Option<Result<(), OpcError>>,
    list_result: Option<Vec<(String, Publish)>>,
    tokens: Vec<Option<Result<(), OpcError>>>,
}

/// Cumulative scan counters, cheap enough to keep always.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanTotals {
    pub scans: u64,
    pub fins_served: u64,
    pub requests_processed: u64,
    pub messages_emitted: u64,
    pub malformed_dropped: u64,
}

pub struct SimWorld {
    now: Nanos,
    next_seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    channel: SimChannel,
    rng: StdRng,
    emu: Emulator,
    period: Nanos,
    next_scan: Nanos,
    clients: Vec<ClientKind>,
    inboxes: Vec<VecDeque<Vec<u8>>>,
    to_server_floor: Vec<Nanos>,
    to_client_floor: Vec<Nanos>,
    consumers: Vec<ConsumerState>,
    producers: Vec<PcProducer>,
    gateway: Option<GatewaySim>,
    totals: ScanTotals,
    record_reports: bool,
    reports: Vec<ScanReport>,
    last_report: Option<ScanReport>,
    verbose: bool,
}

impl SimWorld {
    fn new(cfg: &EmulatorConfig, channel: SimChannel, seed: u64) -> Result<Self, ConfigError> {
        let emu = Emulator::new(&cfg.variables, &cfg.scan)?;
        let period = emu.task_period();
        Ok(Self {
            now: 0,
            next_seq: 0,
            events: BinaryHeap::new(),
            channel,
            rng: StdRng::seed_from_u64(seed),
            emu,
            period,
            next_scan: period,
            clients: Vec::new(),
            inboxes: Vec::new(),
            to_server_floor: Vec::new(),
            to_client_floor: Vec::new(),
            consumers: Vec::new(),
            producers: Vec::new(),
            gateway: None,
            totals: ScanTotals::default(),
            record_reports: false,
            reports: Vec::new(),
            last_report: None,
            verbose: false,
        })
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    fn alloc_client(&mut self, kind: ClientKind) -> u32 {
        let id = self.clients.len() as u32;
        self.clients.push(kind);
        self.inboxes.push(VecDeque::new());
        self.to_server_floor.push(0);
        self.to_client_floor.push(0);
        id
    }

    fn push_event(&mut self, at: Nanos, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(Event { at, seq, kind }));
    }

    fn jitter(&mut self) -> Nanos {
        if self.channel.jitter == 0 {
            0
        } else {
            self.rng.random_range(0..=self.channel.jitter)
        }
    }

    /// Client -> emulator leg of the channel.
    fn client_send(&mut self, client: u32, proto: ProtocolId, payload: Vec<u8>) {
        let jitter = self.jitter();
        let mut at = self.now + self.channel.one_way_delay + jitter;
        let floor = &mut self.to_server_floor[client as usize];
        at = at.max(*floor);
        *floor = at;
        self.push_event(
            at,
            EventKind::ToEmulator {
                proto,
                client,
                payload,
            },
        );
    }

    /// Emulator -> client leg, including per-protocol server overhead.
    fn route_outbound(&mut self, o: Outbound) {
        let ClientAddr::Sim(client) = o.dest else {
            return; // net addresses never occur in simulated mode
        };
        let jitter = self.jitter();
        let mut at = self.now
            + self.channel.server_overhead[o.proto.index()]
            + self.channel.one_way_delay
            + jitter;
        let floor = &mut self.to_client_floor[client as usize];
        at = at.max(*floor);
        *floor = at;
        self.push_event(
            at,
            EventKind::ToClient {
                client,
                payload: o.payload,
            },
        );
    }

    fn next_time(&self) -> Nanos {
        match self.events.peek() {
            Some(Reverse(ev)) => ev.at.min(self.next_scan),
            None => self.next_scan,
        }
    }

    /// Execute the next thing (event or scan) if it is due at or before
    /// `deadline`. Returns false (and leaves time untouched) otherwise.
    fn step_before(&mut self, deadline: Nanos) -> bool {
        let event_due = self
            .events
            .peek()
            .map(|Reverse(e)| e.at <= self.next_scan)
            .unwrap_or(false);
        let t = self.next_time();
        if t > deadline {
            return false;
        }
        if event_due {
            let Reverse(ev) = self.events.pop().unwrap();
            self.now = ev.at;
            self.handle_event(ev.kind);
        } else {
            self.now = self.next_scan;
            self.run_scan();
        }
        true
    }

    fn run_scan(&mut self) {
        let (outs, report) = self.emu.scan_step(self.now);
        for o in outs {
            self.route_outbound(o);
        }
        self.totals.scans += 1;
        self.totals.fins_served += report.fins_served() as u64;
        self.totals.requests_processed += report.requests_processed() as u64;
        self.totals.messages_emitted += report.messages_emitted as u64;
        self.totals.malformed_dropped += report.malformed_dropped as u64;
        if self.verbose {
            println!("{}", report.log_line());
        }
        if self.record_reports {
            self.reports.push(report.clone());
        }
        self.last_report = Some(report);
        self.next_scan += self.period;
    }

    fn handle_event(&mut self, kind: EventKind) {
        match kind {
            EventKind::ToEmulator {
                proto,
                client,
                payload,
            } => {
                self.emu.deliver(InboundMessage {
                    arrival: self.now,
                    proto,
                    client: ClientAddr::Sim(client),
                    payload,
                });
            }
            EventKind::ToClient { client, payload } => match self.clients[client as usize] {
                ClientKind::Inbox => self.inboxes[client as usize].push_back(payload),
                ClientKind::Consumer(idx) => self.consumer_deliver(idx, &payload),
                ClientKind::Gateway => self.gateway_deliver(&payload),
            },
            EventKind::PcProduce { producer } => {
                let now = self.now;
                let (payload, client, rpi) = {
                    let p = &mut self.producers[producer];
                    p.sequence = p.sequence.wrapping_add(1);
                    let msg = CipMessage::LinkData(LinkMessage {
                        connection_id: p.connection_id,
                        sequence: p.sequence,
                        value: f64::from_bits(p.value_bits),
                        produce_timestamp: now,
                    });
                    (
                        wire::encode(&msg).expect("link data encodes"),
                        p.client,
                        p.rpi,
                    )
                };
                self.client_send(client, ProtocolId::Cip, payload);
                self.push_event(now + rpi, EventKind::PcProduce { producer });
            }
            EventKind::GatewayTick => self.gateway_tick(),
        }
    }

    fn consumer_deliver(&mut self, idx: usize, payload: &[u8]) {
        let Ok(CipMessage::LinkData(m)) = wire::decode(payload) else {
            return;
        };
        let cell = &mut self.consumers[idx];
        // Connection-id routing plus per-connection sequence monotonicity.
        if m.connection_id != cell.connection_id {
            return;
        }
        if let Some(last) = cell.last {
            if m.sequence <= last.sequence {
                return;
            }
        }
        cell.last = Some(ConsumerSample {
            value_bits: m.value.to_bits(),
            sequence: m.sequence,
            produce_timestamp: m.produce_timestamp,
        });
    }

    fn gateway_tick(&mut self) {
        let now = self.now;
        let Some(gw) = self.gateway.as_mut() else {
            return;
        };
        let scan_rate = gw.core.scan_rate();
        let mut sends = Vec::new();
        if let Some(items) = gw.core.begin_poll(now) {
            for idx in items {
                let req_id = gw.next_req;
                gw.next_req = gw.next_req.wrapping_add(1);
                gw.pending.push((req_id, PendingGatewayReq::PollItem(idx)));
                let name = gw.core.item_name(idx).to_string();
                sends.push((
                    gw.client,
                    wire::encode(&CipMessage::ReadReq { req_id, name }).expect("encodes"),
                ));
            }
        }
        for (client, payload) in sends {
            self.client_send(client, ProtocolId::Cip, payload);
        }
        self.push_event(now + scan_rate, EventKind::GatewayTick);
    }

    fn gateway_deliver(&mut self, payload: &[u8]) {
        let now = self.now;
        let Some(gw) = self.gateway.as_mut() else {
            return;
        };
        let Ok(msg) = wire::decode(payload) else {
            return;
        };
        match msg {
            CipMessage::ReadResp {
                req_id,
                status,
                value,
            } => {
                let Some(pos) = gw.pending.iter().position(|(id, _)| *id == req_id) else {
                    return;
                };
                let (_, kind) = gw.pending.swap_remove(pos);
                if let PendingGatewayReq::PollItem(idx) = kind {
                    let result = match status {
                        Status::Ok => Ok(value.to_bits()),
                        _ => Err(()),
                    };
                    gw.core.on_poll_result(idx, result, now);
                }
            }
            CipMessage::WriteResp { req_id, status } => {
                let Some(pos) = gw.pending.iter().position(|(id, _)| *id == req_id) else {
                    return;
                };
                let (_, kind) = gw.pending.swap_remove(pos);
                let result = match status {
                    Status::Ok => Ok(()),
                    Status::UnknownTag => Err(OpcError::UnknownItem("remote".into())),
                    other => Err(OpcError::Remote(format!("{other:?}"))),
                };
                match kind {
                    PendingGatewayReq::SyncWrite => gw.sync_write_result = Some(result),
                    PendingGatewayReq::AsyncWrite(tok) => gw.tokens[tok] = Some(result),
                    _ => {}
                }
            }
            CipMessage::ListResp { req_id, tags } => {
                let Some(pos) = gw.pending.iter().position(|(id, _)| *id == req_id) else {
                    return;
                };
                let (_, kind) = gw.pending.swap_remove(pos);
                if matches!(kind, PendingGatewayReq::List) {
                    gw.list_result = Some(tags);
                }
            }
            _ => {}
        }
    }
}

/// Handle on a simulated emulator plus its world. Cloning shares the world.
#[derive(Clone)]
pub struct SimHarness {
    world: Rc<RefCell<SimWorld>>,
}

impl SimHarness {
    pub fn new(cfg: &EmulatorConfig, channel: SimChannel, seed: u64) -> Result<Self, ConfigError> {
        Ok(Self {
            world: Rc::new(RefCell::new(SimWorld::new(cfg, channel, seed)?)),
        })
    }

    /// Current simulated time. Monotone non-decreasing.
    pub fn now(&self) -> Nanos {
        self.world.borrow().now
    }

    pub fn set_verbose(&self, verbose: bool) {
        self.world.borrow_mut().verbose = verbose;
    }

    pub fn record_scan_reports(&self, on: bool) {
        self.world.borrow_mut().record_reports = on;
    }

    pub fn take_scan_reports(&self) -> Vec<ScanReport> {
        std::mem::take(&mut self.world.borrow_mut().reports)
    }

    pub fn totals(&self) -> ScanTotals {
        self.world.borrow().totals
    }

    /// Advance the simulation by `duration`, executing everything due.
    pub fn run_for(&self, duration: Nanos) {
        let mut w = self.world.borrow_mut();
        let deadline = w.now + duration;
        while w.step_before(deadline) {}
        w.now = deadline;
    }

    /// Advance to (and execute) exactly the next scan; returns its report.
    pub fn scan_step(&self) -> ScanReport {
        let mut w = self.world.borrow_mut();
        let scans_before = w.totals.scans;
        while w.totals.scans == scans_before {
            let stepped = w.step_before(Nanos::MAX);
            debug_assert!(stepped);
        }
        w.last_report.clone().expect("scan just ran")
    }

    /// Pump until the emulator has served `n` FINS requests in total.
    pub fn run_until_fins_served(&self, n: u64) {
        let mut w = self.world.borrow_mut();
        while w.totals.fins_served < n {
            w.step_before(Nanos::MAX);
        }
    }

    /// Test access: peek a PLC variable.
    pub fn variable(&self, name: &str) -> Option<f64> {
        self.world.borrow().emu.variable(name)
    }

    /// Test access: poke a PLC variable directly.
    pub fn set_variable(&self, name: &str, value: f64) -> bool {
        self.world.borrow_mut().emu.set_variable(name, value)
    }

    pub fn transport(&self, proto: ProtocolId) -> SimTransport {
        let client = self.world.borrow_mut().alloc_client(ClientKind::Inbox);
        SimTransport {
            world: Rc::clone(&self.world),
            client,
            proto,
        }
    }

    /// Register a PC->PLC link: a PC-side producer feeding a PLC Input tag.
    pub fn link_pc_to_plc(
        &self,
        connection_id: u32,
        plc_tag: &str,
        rpi: Nanos,
    ) -> Result<PcProducerHandle, crate::plcsim::emulator::LinkError> {
        if rpi == 0 {
            return Err(crate::plcsim::emulator::LinkError::ZeroRpi);
        }
        let mut w = self.world.borrow_mut();
        w.emu.add_consumer_link(connection_id, plc_tag)?;
        let client = w.alloc_client(ClientKind::Inbox);
        let producer = w.producers.len();
        w.producers.push(PcProducer {
            connection_id,
            client,
            value_bits: 0.0f64.to_bits(),
            sequence: 0,
            rpi,
        });
        let at = w.now;
        w.push_event(at, EventKind::PcProduce { producer });
        Ok(PcProducerHandle {
            world: Rc::clone(&self.world),
            producer,
        })
    }

    /// Register a PLC->PC link: the PLC publishes an Output tag to a PC cell.
    pub fn link_plc_to_pc(
        &self,
        connection_id: u32,
        plc_tag: &str,
        rpi: Nanos,
    ) -> Result<PcConsumerHandle, crate::plcsim::emulator::LinkError> {
        let mut w = self.world.borrow_mut();
        let idx = w.consumers.len();
        let client = w.alloc_client(ClientKind::Consumer(idx));
        w.consumers.push(ConsumerState {
            connection_id,
            last: None,
        });
        w.emu.add_producer_link(TagLinkSpec {
            connection_id,
            producer_tag: plc_tag.to_string(),
            consumers: vec![ClientAddr::Sim(client)],
            rpi,
        })?;
        Ok(PcConsumerHandle {
            world: Rc::clone(&self.world),
            consumer: idx,
        })
    }

    /// Wire up a tag data link from its description. Returns the PC-side
    /// endpoints; the PLC side registers inside the emulator.
    pub fn create_link(
        &self,
        link: &crate::ciplite::TagLink,
    ) -> Result<LinkEnds, crate::plcsim::emulator::LinkError> {
        use crate::ciplite::LinkNode;
        if link.consumers.is_empty() {
            return Err(crate::plcsim::emulator::LinkError::NoConsumers);
        }
        match link.producer.0 {
            LinkNode::Pc => {
                // Desk scale: the single consumer is a PLC tag.
                let (node, tag) = &link.consumers[0];
                if *node != LinkNode::Plc || link.consumers.len() != 1 {
                    return Err(crate::plcsim::emulator::LinkError::NoConsumers);
                }
                Ok(LinkEnds::PcToPlc(self.link_pc_to_plc(
                    link.connection_id,
                    tag,
                    link.rpi,
                )?))
            }
            LinkNode::Plc => {
                let mut w = self.world.borrow_mut();
                if link.rpi == 0 {
                    return Err(crate::plcsim::emulator::LinkError::ZeroRpi);
                }
                let mut cells = Vec::new();
                let mut addrs = Vec::new();
                for (node, _tag) in &link.consumers {
                    if *node != LinkNode::Pc {
                        return Err(crate::plcsim::emulator::LinkError::NoConsumers);
                    }
                    let idx = w.consumers.len();
                    let client = w.alloc_client(ClientKind::Consumer(idx));
                    w.consumers.push(ConsumerState {
                        connection_id: link.connection_id,
                        last: None,
                    });
                    addrs.push(ClientAddr::Sim(client));
                    cells.push(idx);
                }
                w.emu.add_producer_link(TagLinkSpec {
                    connection_id: link.connection_id,
                    producer_tag: link.producer.1.clone(),
                    consumers: addrs,
                    rpi: link.rpi,
                })?;
                drop(w);
                Ok(LinkEnds::PlcToPc(
                    cells
                        .into_iter()
                        .map(|consumer| PcConsumerHandle {
                            world: Rc::clone(&self.world),
                            consumer,
                        })
                        .collect(),
                ))
            }
        }
    }

    /// The standard paired links used by the cyclic benchmark: PC produces
    /// into the PLC's Input tag, the PLC publishes its Output tag back.
    pub fn linked_pair(
        &self,
        pc_to_plc: u32,
        plc_to_pc: u32,
        input_tag: &str,
        output_tag: &str,
        rpi: Nanos,
        poll_timeout: Nanos,
    ) -> Result<LinkedPairSim, crate::plcsim::emulator::LinkError> {
        let producer = self.link_pc_to_plc(pc_to_plc, input_tag, rpi)?;
        let consumer = self.link_plc_to_pc(plc_to_pc, output_tag, rpi)?;
        Ok(LinkedPairSim {
            producer,
            consumer,
            poll_timeout,
            last_latency: None,
        })
    }

    /// Connect the polling gateway: lists published tags, auto-creates one
    /// item per tag (quality Bad), and schedules polling every `scan_rate`.
    pub fn opc_connect(
        &self,
        scan_rate: Nanos,
        read_timeout: Nanos,
    ) -> Result<OpcSimClient, OpcError> {
        let list = {
            let mut w = self.world.borrow_mut();
            if w.gateway.is_some() {
                return Err(OpcError::Connection("gateway already connected".into()));
            }
            let client = w.alloc_client(ClientKind::Gateway);
            w.gateway = Some(GatewaySim {
                core: GatewayCore::new(scan_rate),
                client,
                next_req: 0,
                pending: vec![(0, PendingGatewayReq::List)],
                sync_write_result: None,
                list_result: None,
                tokens: Vec::new(),
            });
            let gw = w.gateway.as_mut().unwrap();
            gw.next_req = 1;
            let payload = wire::encode(&CipMessage::ListReq { req_id: 0 }).expect("encodes");
            w.client_send(client, ProtocolId::Cip, payload);
            let deadline = w.now + read_timeout;
            loop {
                if let Some(tags) = w.gateway.as_mut().and_then(|g| g.list_result.take()) {
                    break Some(tags);
                }
                if !w.step_before(deadline) {
                    break None;
                }
            }
        };
        let tags = list.ok_or_else(|| OpcError::Connection("device unreachable".into()))?;
        let mut w = self.world.borrow_mut();
        let gw = w.gateway.as_mut().unwrap();
        gw.core.create_items(&tags);
        let at = w.now;
        w.push_event(at, EventKind::GatewayTick);
        Ok(OpcSimClient {
            world: Rc::clone(&self.world),
            scan_rate,
            read_timeout,
            last_latency: None,
        })
    }
}

/// Simulated client endpoint; blocking receive pumps the world.
pub struct SimTransport {
    world: Rc<RefCell<SimWorld>>,
    client: u32,
    proto: ProtocolId,
}

impl Transport for SimTransport {
    fn send(&mut self, payload: &[u8]) -> Result<(), TransportError> {
        self.world
            .borrow_mut()
            .client_send(self.client, self.proto, payload.to_vec());
        Ok(())
    }

    fn recv_deadline(&mut self, deadline: Nanos) -> Result<Vec<u8>, TransportError> {
        let mut w = self.world.borrow_mut();
        loop {
            if let Some(msg) = w.inboxes[self.client as usize].pop_front() {
                return Ok(msg);
            }
            if !w.step_before(deadline) {
                w.now = deadline.max(w.now);
                return Err(TransportError::Timeout);
            }
        }
    }

    fn now(&self) -> Nanos {
        self.world.borrow().now
    }
}

/// PC-side producer endpoint of a PC->PLC tag link.
pub struct PcProducerHandle {
    world: Rc<RefCell<SimWorld>>,
    producer: usize,
}

impl PcProducerHandle {
    /// Set the local producer tag; the new value rides the next RPI emission.
    pub fn set(&mut self, value: f64) {
        self.world.borrow_mut().producers[self.producer].value_bits = value.to_bits();
    }

    pub fn now(&self) -> Nanos {
        self.world.borrow().now
    }
}

/// PC-side consumer endpoint of a PLC->PC tag link.
pub struct PcConsumerHandle {
    world: Rc<RefCell<SimWorld>>,
    consumer: usize,
}

impl PcConsumerHandle {
    /// Local copy and its staleness (now minus produce timestamp), without
    /// touching the network. None until the first message lands.
    pub fn read(&self) -> Option<(f64, Nanos)> {
        let w = self.world.borrow();
        w.consumers[self.consumer].last.map(|s| {
            (
                f64::from_bits(s.value_bits),
                w.now.saturating_sub(s.produce_timestamp),
            )
        })
    }

    /// Pump the simulation until the local copy holds `bits` exactly.
    pub fn wait_for_bits(&self, bits: u64, deadline: Nanos) -> bool {
        let mut w = self.world.borrow_mut();
        loop {
            if w.consumers[self.consumer]
                .last
                .map(|s| s.value_bits == bits)
                .unwrap_or(false)
            {
                return true;
            }
            if !w.step_before(deadline) {
                w.now = deadline.max(w.now);
                return false;
            }
        }
    }

    pub fn now(&self) -> Nanos {
        self.world.borrow().now
    }
}

/// PC-side endpoints created by [`SimHarness::create_link`].
pub enum LinkEnds {
    PcToPlc(PcProducerHandle),
    PlcToPc(Vec<PcConsumerHandle>),
}

/// Both directions of the cyclic fixture, driving the write/read cycle over
/// implicit messaging.
pub struct LinkedPairSim {
    producer: PcProducerHandle,
    consumer: PcConsumerHandle,
    poll_timeout: Nanos,
    last_latency: Option<Nanos>,
}

impl crate::ciplite::LinkCycleApi for LinkedPairSim {
    fn set_local(&mut self, value: f64) {
        self.producer.set(value);
    }

    fn linked_read(&mut self) -> Result<(f64, Nanos), crate::ciplite::LinkReadError> {
        self.consumer
            .read()
            .ok_or(crate::ciplite::LinkReadError::NotReady)
    }

    fn linked_cycle(&mut self, value: f64) -> Result<f64, crate::ciplite::LinkReadError> {
        let start = self.consumer.now();
        self.producer.set(value);
        if !self
            .consumer
            .wait_for_bits(value.to_bits(), start + self.poll_timeout)
        {
            return Err(crate::ciplite::LinkReadError::Timeout);
        }
        self.last_latency = Some(self.consumer.now() - start);
        Ok(value)
    }

    fn last_latency(&self) -> Option<Nanos> {
        self.last_latency
    }

    fn now(&self) -> Nanos {
        self.consumer.now()
    }
}

/// Client view of the simulated gateway.
pub struct OpcSimClient {
    world: Rc<RefCell<SimWorld>>,
    scan_rate: Nanos,
    read_timeout: Nanos,
    last_latency: Option<Nanos>,
}

/// Completion handle for an asynchronous gateway write.
pub struct OpcSimToken {
    world: Rc<RefCell<SimWorld>>,
    token: usize,
}

impl OpcSimToken {
    /// Non-blocking look at the outcome.
    pub fn poll(&self) -> Option<Result<(), OpcError>> {
        self.world
            .borrow()
            .gateway
            .as_ref()
            .and_then(|g| g.tokens[self.token].clone())
    }

    /// Pump until the outcome arrives.
    pub fn wait(&self, timeout: Nanos) -> Result<(), OpcError> {
        let deadline = self.world.borrow().now + timeout;
        loop {
            if let Some(r) = self.poll() {
                return r;
            }
            let mut w = self.world.borrow_mut();
            if !w.step_before(deadline) {
                return Err(OpcError::Timeout);
            }
        }
    }
}

impl OpcSimClient {
    pub fn now(&self) -> Nanos {
        self.world.borrow().now
    }

    pub fn last_latency(&self) -> Option<Nanos> {
        self.last_latency
    }

    pub fn item_names(&self) -> Vec<String> {
        self.world
            .borrow()
            .gateway
            .as_ref()
            .map(|g| g.core.item_names())
            .unwrap_or_default()
    }

    pub fn item_quality(&self, item: &str) -> Option<Quality> {
        let w = self.world.borrow();
        let gw = w.gateway.as_ref()?;
        let idx = gw.core.item_index(item)?;
        Some(gw.core.item(idx).quality)
    }

    pub fn poll_reports(&self) -> Vec<PollReport> {
        self.world
            .borrow()
            .gateway
            .as_ref()
            .map(|g| g.core.reports().iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn poll_reports_csv(&self) -> String {
        self.world
            .borrow()
            .gateway
            .as_ref()
            .map(|g| g.core.reports_csv())
            .unwrap_or_default()
    }

    /// Block until the next poll that starts at or after the call completes,
    /// then return the fresh cached value.
    pub fn read_sync(&mut self, item: &str) -> Result<f64, OpcError> {
        let (called, deadline, idx) = {
            let w = self.world.borrow();
            let gw = w
                .gateway
                .as_ref()
                .ok_or_else(|| OpcError::Connection("not connected".into()))?;
            let idx = gw
                .core
                .item_index(item)
                .ok_or_else(|| OpcError::UnknownItem(item.into()))?;
            (w.now, w.now + 2 * self.scan_rate + self.read_timeout, idx)
        };
        let mut w = self.world.borrow_mut();
        loop {
            let gw = w.gateway.as_ref().unwrap();
            if gw.core.completion_started_at_or_after(called).is_some() {
                let item_state = gw.core.item(idx);
                if item_state.quality == Quality::Bad {
                    self.last_latency = None;
                    return Err(OpcError::Quality(item.into()));
                }
                let value = f64::from_bits(item_state.value_bits);
                self.last_latency = Some(w.now - called);
                return Ok(value);
            }
            if !w.step_before(deadline) {
                w.now = deadline.max(w.now);
                return Err(OpcError::Timeout);
            }
        }
    }

    /// Forward a write immediately (bypassing the poll schedule) and await
    /// the acknowledgment.
    pub fn write_sync(&mut self, item: &str, value: f64) -> Result<(), OpcError> {
        let called = self.now();
        let deadline = called + self.read_timeout;
        {
            let mut w = self.world.borrow_mut();
            send_gateway_write(&mut w, item, value, PendingWriteKind::Sync)?;
        }
        loop {
            let mut w = self.world.borrow_mut();
            if let Some(result) = w.gateway.as_mut().and_then(|g| g.sync_write_result.take()) {
                if result.is_ok() {
                    self.last_latency = Some(w.now - called);
                }
                return result;
            }
            if !w.step_before(deadline) {
                w.now = deadline.max(w.now);
                return Err(OpcError::Timeout);
            }
        }
    }

    /// Fire a write and return immediately; completion is observable through
    /// the token and may be ignored. Consumes no simulated time.
    pub fn write_async(&mut self, item: &str, value: f64) -> OpcSimToken {
        let mut w = self.world.borrow_mut();
        let token = {
            let gw = w.gateway.as_mut().expect("gateway connected");
            gw.tokens.push(None);
            gw.tokens.len() - 1
        };
        if let Err(e) = send_gateway_write(&mut w, item, value, PendingWriteKind::Async(token)) {
            let gw = w.gateway.as_mut().expect("gateway connected");
            gw.tokens[token] = Some(Err(e));
        }
        OpcSimToken {
            world: Rc::clone(&self.world),
            token,
        }
    }

    /// Async write then synchronous reads until the value echoes back
    /// through the scan copy. One cycle latency sample.
    pub fn cycle(
        &mut self,
        write_item: &str,
        read_item: &str,
        value: f64,
    ) -> Result<f64, OpcError> {
        let started = self.now();
        let overall = started + 8 * self.scan_rate + self.read_timeout;
        let _token = self.write_async(write_item, value);
        loop {
            let got = self.read_sync(read_item)?;
            if got.to_bits() == value.to_bits() {
                self.last_latency = Some(self.now() - started);
                return Ok(got);
            }
            if self.now() > overall {
                return Err(OpcError::Timeout);
            }
        }
    }
}

enum PendingWriteKind {
    Sync,
    Async(usize),
}

fn send_gateway_write(
    w: &mut SimWorld,
    item: &str,
    value: f64,
    kind: PendingWriteKind,
) -> Result<(), OpcError> {
    let (client, payload) = {
        let gw = w
            .gateway
            .as_mut()
            .ok_or_else(|| OpcError::Connection("not connected".into()))?;
        if gw.core.item_index(item).is_none() {
            return Err(OpcError::UnknownItem(item.into()));
        }
        let req_id = gw.next_req;
        gw.next_req = gw.next_req.wrapping_add(1);
        let pending = match kind {
            PendingWriteKind::Sync => PendingGatewayReq::SyncWrite,
            PendingWriteKind::Async(tok) => PendingGatewayReq::AsyncWrite(tok),
        };
        gw.pending.push((req_id, pending));
        let payload = wire::encode(&CipMessage::WriteReq {
            req_id,
            name: item.to_string(),
            value,
        })
        .expect("encodes");
        (gw.client, payload)
    };
    w.client_send(client, ProtocolId::Cip, payload);
    Ok(())
}
