//! The scan-cycle emulator core.
//!
//! A single logical thread owns the variable table. Protocol endpoints only
//! deposit datagrams into the inbox; everything observable happens inside
//! `scan_step`, which executes the fixed six-phase order:
//!
//! 1. drain arrived datagrams into per-endpoint processing queues
//! 2. apply writes (FINS/CIP explicit, CIP link data) in arrival order
//! 3. execute the copy rules
//! 4. serve queued reads against post-copy state
//! 5. advance the two echo rungs
//! 6. publish producer tag links whose RPI elapsed
//!
//! This order makes a write+read pair issued back to back observe the
//! written value within one scan, which is what makes request pipelining
//! pay off.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;

use thiserror::Error;

use crate::ciplite::wire::{self, CipMessage, LinkMessage, Status};
use crate::clock::Nanos;
use crate::fins::frame::{
    self, end_codes, FinsCommand, FinsFrame, FinsHeader, FinsRequest, FinsResponse,
};
use crate::udplink::{PAYLOAD_LEN, QUERY_PATTERN};

use super::variable::{ConfigError, DmFault, Publish, ScanConfig, VariableSpec, VariableTable};

/// Server endpoint a datagram arrived on / leaves from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolId {
    Fins,
    Cip,
    Raw,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 3] = [ProtocolId::Fins, ProtocolId::Cip, ProtocolId::Raw];

    pub fn index(self) -> usize {
        match self {
            ProtocolId::Fins => 0,
            ProtocolId::Cip => 1,
            ProtocolId::Raw => 2,
        }
    }
}

/// Reply address for a datagram: a simulated client id or a real socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClientAddr {
    Sim(u32),
    Net(SocketAddr),
}

#[derive(Debug, Clone)]
pub struct InboundMessage {
    pub arrival: Nanos,
    pub proto: ProtocolId,
    pub client: ClientAddr,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Outbound {
    pub proto: ProtocolId,
    pub dest: ClientAddr,
    pub payload: Vec<u8>,
}

/// Per-scan activity counters, one record per executed scan.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct ScanReport {
    pub scan_index: u64,
    pub at_ns: u64,
    pub fins_reads: u32,
    pub fins_writes: u32,
    pub fins_errors: u32,
    pub cip_reads: u32,
    pub cip_writes: u32,
    pub cip_lists: u32,
    pub cip_errors: u32,
    pub link_applied: u32,
    pub link_stale_dropped: u32,
    pub link_published: u32,
    pub raw_echoed: u32,
    pub raw_queries: u32,
    pub malformed_dropped: u32,
    pub copies: u32,
    pub messages_emitted: u32,
}

impl ScanReport {
    /// Requests answered this scan, over all protocols.
    pub fn requests_processed(&self) -> u32 {
        self.fins_reads
            + self.fins_writes
            + self.fins_errors
            + self.cip_reads
            + self.cip_writes
            + self.cip_lists
            + self.cip_errors
            + self.raw_echoed
            + self.raw_queries
    }

    pub fn fins_served(&self) -> u32 {
        self.fins_reads + self.fins_writes
    }

    /// One-line key=value rendering for the verbose scan log.
    pub fn log_line(&self) -> String {
        format!(
            "scan={} t_ns={} processed={} emitted={} fins_r={} fins_w={} fins_err={} \
             cip_r={} cip_w={} cip_err={} link_in={} link_stale={} link_out={} \
             raw_echo={} raw_query={} malformed={} copies={}",
            self.scan_index,
            self.at_ns,
            self.requests_processed(),
            self.messages_emitted,
            self.fins_reads,
            self.fins_writes,
            self.fins_errors,
            self.cip_reads,
            self.cip_writes,
            self.cip_errors,
            self.link_applied,
            self.link_stale_dropped,
            self.link_published,
            self.raw_echoed,
            self.raw_queries,
            self.malformed_dropped,
            self.copies,
        )
    }
}

/// Producer->consumer tag data link configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TagLinkSpec {
    pub connection_id: u32,
    /// Producer tag name on the PLC (Output publish).
    pub producer_tag: String,
    /// Consumer delivery addresses (enumerated unicast).
    pub consumers: Vec<ClientAddr>,
    pub rpi: Nanos,
}

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("duplicate connection id {0}")]
    DuplicateConnection(u32),
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("tag {tag:?} has publish direction {dir:?}, expected {expected:?}")]
    Direction {
        tag: String,
        dir: Publish,
        expected: Publish,
    },
    #[error("rpi must be positive")]
    ZeroRpi,
    #[error("a link needs at least one consumer")]
    NoConsumers,
}

struct ProducerLink {
    spec: TagLinkSpec,
    tag_index: usize,
    sequence: u32,
    next_publish: Nanos,
}

struct ConsumerLink {
    tag_index: usize,
    last_sequence: Option<u32>,
}

#[derive(Debug, Clone, Copy)]
enum RawEntry {
    Echo(u64),
    Query,
}

/// Two-rung echo state: one rung loads per scan (they alternate), a loaded
/// datagram departs at the first scan after the one that loaded it. A lone
/// datagram arriving during scan k is therefore echoed at scan k+1; a
/// second datagram queued behind it goes out at k+2.
struct EchoRungs {
    slots: [Option<(RawEntry, ClientAddr, u64)>; 2],
    queue: VecDeque<(RawEntry, ClientAddr)>,
}

impl EchoRungs {
    fn new() -> Self {
        Self {
            slots: [None, None],
            queue: VecDeque::new(),
        }
    }
}

/// The deterministic emulator state machine. Time is whatever the driver
/// says it is; the core never looks at a real clock.
pub struct Emulator {
    table: VariableTable,
    copy_rules: Vec<(usize, usize)>,
    task_period: Nanos,
    inbox: VecDeque<InboundMessage>,
    rungs: EchoRungs,
    producers: Vec<ProducerLink>,
    consumers: HashMap<u32, ConsumerLink>,
    scan_index: u64,
}

impl Emulator {
    pub fn new(vars: &[VariableSpec], scan: &ScanConfig) -> Result<Self, ConfigError> {
        if scan.task_period == 0 {
            return Err(ConfigError::ZeroTaskPeriod);
        }
        let table = VariableTable::new(vars)?;
        let mut copy_rules = Vec::with_capacity(scan.copy_rules.len());
        for (src, dst) in &scan.copy_rules {
            let s = table
                .index_of(src)
                .ok_or_else(|| ConfigError::UnknownVariable(src.clone()))?;
            let d = table
                .index_of(dst)
                .ok_or_else(|| ConfigError::UnknownVariable(dst.clone()))?;
            copy_rules.push((s, d));
        }
        Ok(Self {
            table,
            copy_rules,
            task_period: scan.task_period,
            inbox: VecDeque::new(),
            rungs: EchoRungs::new(),
            producers: Vec::new(),
            consumers: HashMap::new(),
            scan_index: 0,
        })
    }

    pub fn task_period(&self) -> Nanos {
        self.task_period
    }

    pub fn scan_index(&self) -> u64 {
        self.scan_index
    }

    pub fn variable(&self, name: &str) -> Option<f64> {
        self.table.by_name(name).map(|v| v.value)
    }

    /// Directly set a variable (test and fixture plumbing, not a protocol path).
    pub fn set_variable(&mut self, name: &str, value: f64) -> bool {
        match self.table.index_of(name) {
            Some(idx) => {
                self.table.set_value(idx, value);
                true
            }
            None => false,
        }
    }

    pub fn published_tags(&self) -> Vec<(String, Publish)> {
        self.table
            .iter()
            .filter(|v| v.publish != Publish::None)
            .map(|v| (v.name.clone(), v.publish))
            .collect()
    }

    /// Register a PLC-side producer link (phase 6 publisher).
    pub fn add_producer_link(&mut self, spec: TagLinkSpec) -> Result<(), LinkError> {
        if spec.rpi == 0 {
            return Err(LinkError::ZeroRpi);
        }
        if spec.consumers.is_empty() {
            return Err(LinkError::NoConsumers);
        }
        if self.link_id_taken(spec.connection_id) {
            return Err(LinkError::DuplicateConnection(spec.connection_id));
        }
        let tag_index = self
            .table
            .index_of(&spec.producer_tag)
            .ok_or_else(|| LinkError::UnknownTag(spec.producer_tag.clone()))?;
        let dir = self.table.get(tag_index).publish;
        if dir != Publish::Output {
            return Err(LinkError::Direction {
                tag: spec.producer_tag.clone(),
                dir,
                expected: Publish::Output,
            });
        }
        self.producers.push(ProducerLink {
            spec,
            tag_index,
            sequence: 0,
            next_publish: 0,
        });
        Ok(())
    }

    /// Register a PLC-side consumer link (link data applied in phase 2).
    pub fn add_consumer_link(&mut self, connection_id: u32, tag: &str) -> Result<(), LinkError> {
        if self.link_id_taken(connection_id) {
            return Err(LinkError::DuplicateConnection(connection_id));
        }
        let tag_index = self
            .table
            .index_of(tag)
            .ok_or_else(|| LinkError::UnknownTag(tag.to_string()))?;
        let dir = self.table.get(tag_index).publish;
        if dir != Publish::Input {
            return Err(LinkError::Direction {
                tag: tag.to_string(),
                dir,
                expected: Publish::Input,
            });
        }
        self.consumers.insert(
            connection_id,
            ConsumerLink {
                tag_index,
                last_sequence: None,
            },
        );
        Ok(())
    }

    fn link_id_taken(&self, id: u32) -> bool {
        self.consumers.contains_key(&id)
            || self.producers.iter().any(|p| p.spec.connection_id == id)
    }

    /// Deposit an arrived datagram. Arrival times must be non-decreasing.
    pub fn deliver(&mut self, msg: InboundMessage) {
        debug_assert!(self
            .inbox
            .back()
            .map(|m| m.arrival <= msg.arrival)
            .unwrap_or(true));
        self.inbox.push_back(msg);
    }

    /// Execute one scan at time `now`. Returns the responses to emit (all at
    /// this scan's timestamp) and the scan's activity report.
    pub fn scan_step(&mut self, now: Nanos) -> (Vec<Outbound>, ScanReport) {
        let mut report = ScanReport {
            scan_index: self.scan_index,
            at_ns: now,
            ..ScanReport::default()
        };
        let mut out = Vec::new();

        // Phase 1: drain everything that has arrived by now.
        let mut drained = Vec::new();
        while self
            .inbox
            .front()
            .map(|m| m.arrival <= now)
            .unwrap_or(false)
        {
            drained.push(self.inbox.pop_front().unwrap());
        }

        // Phase 2: writes, in arrival order. Reads are parked for phase 4.
        enum Parked {
            FinsRead(ClientAddr, FinsRequest),
            CipRead(ClientAddr, u32, String),
            CipList(ClientAddr, u32),
        }
        let mut parked: Vec<Parked> = Vec::new();
        for msg in drained {
            match msg.proto {
                ProtocolId::Fins => match frame::decode_frame(&msg.payload) {
                    Ok(FinsFrame::Request(req)) => match req.command {
                        FinsCommand::MemoryAreaWrite { .. } => {
                            let resp = self.apply_fins_write(&req, &mut report);
                            out.push(fins_outbound(msg.client, resp));
                        }
                        FinsCommand::MemoryAreaRead { .. } => {
                            parked.push(Parked::FinsRead(msg.client, req));
                        }
                    },
                    Ok(FinsFrame::Response(_)) => {
                        // A response aimed at the server is not answerable.
                        report.malformed_dropped += 1;
                    }
                    Err(_) => {
                        if let Some(resp) = fins_error_salvage(&msg.payload) {
                            report.fins_errors += 1;
                            out.push(fins_outbound(msg.client, resp));
                        } else {
                            report.malformed_dropped += 1;
                        }
                    }
                },
                ProtocolId::Cip => match wire::decode(&msg.payload) {
                    Ok(CipMessage::WriteReq {
                        req_id,
                        name,
                        value,
                    }) => {
                        let status = self.apply_cip_write(&name, value);
                        if status == Status::Ok {
                            report.cip_writes += 1;
                        } else {
                            report.cip_errors += 1;
                        }
                        out.push(cip_outbound(
                            msg.client,
                            &CipMessage::WriteResp { req_id, status },
                        ));
                    }
                    Ok(CipMessage::LinkData(link)) => {
                        self.apply_link_data(&link, &mut report);
                    }
                    Ok(CipMessage::ReadReq { req_id, name }) => {
                        parked.push(Parked::CipRead(msg.client, req_id, name));
                    }
                    Ok(CipMessage::ListReq { req_id }) => {
                        parked.push(Parked::CipList(msg.client, req_id));
                    }
                    Ok(_) => {
                        report.malformed_dropped += 1;
                    }
                    Err(_) => {
                        report.cip_errors += 1;
                        out.push(cip_outbound(
                            msg.client,
                            &CipMessage::WriteResp {
                                req_id: 0,
                                status: Status::Malformed,
                            },
                        ));
                    }
                },
                ProtocolId::Raw => {
                    if msg.payload.len() != PAYLOAD_LEN {
                        report.malformed_dropped += 1;
                        continue;
                    }
                    let bits = u64::from_be_bytes(msg.payload.as_slice().try_into().unwrap());
                    let entry = if bits == QUERY_PATTERN {
                        RawEntry::Query
                    } else {
                        RawEntry::Echo(bits)
                    };
                    self.rungs.queue.push_back((entry, msg.client));
                }
            }
        }

        // Phase 3: copy rules, in declaration order.
        for &(src, dst) in &self.copy_rules {
            let v = self.table.get(src).value;
            self.table.set_value(dst, v);
        }
        report.copies = self.copy_rules.len() as u32;

        // Phase 4: serve parked reads against post-copy state.
        for p in parked {
            match p {
                Parked::FinsRead(client, req) => {
                    let resp = self.serve_fins_read(&req, &mut report);
                    out.push(fins_outbound(client, resp));
                }
                Parked::CipRead(client, req_id, name) => {
                    let (status, value) = match self.table.by_name(&name) {
                        Some(v) => (Status::Ok, v.value),
                        None => (Status::UnknownTag, 0.0),
                    };
                    if status == Status::Ok {
                        report.cip_reads += 1;
                    } else {
                        report.cip_errors += 1;
                    }
                    out.push(cip_outbound(
                        client,
                        &CipMessage::ReadResp {
                            req_id,
                            status,
                            value,
                        },
                    ));
                }
                Parked::CipList(client, req_id) => {
                    report.cip_lists += 1;
                    out.push(cip_outbound(
                        client,
                        &CipMessage::ListResp {
                            req_id,
                            tags: self.published_tags(),
                        },
                    ));
                }
            }
        }

        // Phase 5: echo rungs. Emit anything loaded on an earlier scan, then
        // let the active rung pick up one queued datagram.
        for slot in self.rungs.slots.iter_mut() {
            if let Some((entry, client, loaded)) = *slot {
                if loaded < self.scan_index {
                    let bits = match entry {
                        RawEntry::Echo(bits) => {
                            report.raw_echoed += 1;
                            bits
                        }
                        RawEntry::Query => {
                            report.raw_queries += 1;
                            match self.table.first_output() {
                                Some(idx) => self.table.get(idx).value.to_bits(),
                                None => QUERY_PATTERN,
                            }
                        }
                    };
                    out.push(Outbound {
                        proto: ProtocolId::Raw,
                        dest: client,
                        payload: bits.to_be_bytes().to_vec(),
                    });
                    *slot = None;
                }
            }
        }
        let active = (self.scan_index % 2) as usize;
        if self.rungs.slots[active].is_none() {
            if let Some((entry, client)) = self.rungs.queue.pop_front() {
                self.rungs.slots[active] = Some((entry, client, self.scan_index));
            }
        }

        // Phase 6: publish producer links whose RPI elapsed.
        for link in self.producers.iter_mut() {
            if now >= link.next_publish {
                link.sequence = link.sequence.wrapping_add(1);
                let value = self.table.get(link.tag_index).value;
                let msg = CipMessage::LinkData(LinkMessage {
                    connection_id: link.spec.connection_id,
                    sequence: link.sequence,
                    value,
                    produce_timestamp: now,
                });
                let payload = wire::encode(&msg).expect("link data encodes");
                for dest in &link.spec.consumers {
                    out.push(Outbound {
                        proto: ProtocolId::Cip,
                        dest: *dest,
                        payload: payload.clone(),
                    });
                    report.link_published += 1;
                }
                link.next_publish = now + link.spec.rpi;
            }
        }

        report.messages_emitted = out.len() as u32;
        self.scan_index += 1;
        (out, report)
    }

    fn apply_fins_write(&mut self, req: &FinsRequest, report: &mut ScanReport) -> FinsResponse {
        let header = FinsHeader::reply_to(&req.header);
        let (area_code, address, words) = match &req.command {
            FinsCommand::MemoryAreaWrite {
                area_code,
                address,
                words,
                ..
            } => (*area_code, *address, words),
            _ => unreachable!("caller dispatched on command"),
        };
        let end_code = if area_code != frame::AREA_DM_WORD {
            end_codes::ADDRESS_RANGE
        } else {
            match self.table.write_dm(address, words) {
                Ok(()) => end_codes::NORMAL,
                Err(DmFault::Unmapped) => end_codes::ADDRESS_RANGE,
            }
        };
        if end_code == end_codes::NORMAL {
            report.fins_writes += 1;
        } else {
            report.fins_errors += 1;
        }
        FinsResponse {
            header,
            command_code: frame::CMD_MEMORY_AREA_WRITE,
            end_code,
            payload: vec![],
        }
    }

    fn serve_fins_read(&mut self, req: &FinsRequest, report: &mut ScanReport) -> FinsResponse {
        let header = FinsHeader::reply_to(&req.header);
        let (area_code, address, count) = match &req.command {
            FinsCommand::MemoryAreaRead {
                area_code,
                address,
                count,
                ..
            } => (*area_code, *address, *count),
            _ => unreachable!("caller dispatched on command"),
        };
        let (end_code, payload) = if area_code != frame::AREA_DM_WORD {
            (end_codes::ADDRESS_RANGE, vec![])
        } else {
            match self.table.read_dm(address, count) {
                Ok(words) => (end_codes::NORMAL, words),
                Err(DmFault::Unmapped) => (end_codes::ADDRESS_RANGE, vec![]),
            }
        };
        if end_code == end_codes::NORMAL {
            report.fins_reads += 1;
        } else {
            report.fins_errors += 1;
        }
        FinsResponse {
            header,
            command_code: frame::CMD_MEMORY_AREA_READ,
            end_code,
            payload,
        }
    }

    fn apply_cip_write(&mut self, name: &str, value: f64) -> Status {
        match self.table.index_of(name) {
            None => Status::UnknownTag,
            Some(idx) => {
                if self.table.get(idx).publish != Publish::Input {
                    Status::Direction
                } else {
                    self.table.set_value(idx, value);
                    Status::Ok
                }
            }
        }
    }

    fn apply_link_data(&mut self, link: &LinkMessage, report: &mut ScanReport) {
        let Some(consumer) = self.consumers.get_mut(&link.connection_id) else {
            report.malformed_dropped += 1;
            return;
        };
        if let Some(last) = consumer.last_sequence {
            if link.sequence <= last {
                report.link_stale_dropped += 1;
                return;
            }
        }
        consumer.last_sequence = Some(link.sequence);
        self.table.set_value(consumer.tag_index, link.value);
        report.link_applied += 1;
    }
}

fn fins_outbound(dest: ClientAddr, resp: FinsResponse) -> Outbound {
    Outbound {
        proto: ProtocolId::Fins,
        dest,
        payload: frame::encode_response(&resp).expect("server response encodes"),
    }
}

fn cip_outbound(dest: ClientAddr, msg: &CipMessage) -> Outbound {
    Outbound {
        proto: ProtocolId::Cip,
        dest,
        payload: wire::encode(msg).expect("server response encodes"),
    }
}

/// Build a command-format error response for an undecodable FINS frame, if
/// enough of the header survived to route a reply.
fn fins_error_salvage(payload: &[u8]) -> Option<FinsResponse> {
    if payload.len() < frame::HEADER_LEN + 2 {
        return None;
    }
    let req_header = FinsHeader {
        icf: payload[0],
        rsv: payload[1],
        gct: payload[2],
        dna: payload[3],
        da1: payload[4],
        da2: payload[5],
        sna: payload[6],
        sa1: payload[7],
        sa2: payload[8],
        sid: payload[9],
    };
    if req_header.is_response() {
        return None;
    }
    let code = u16::from_be_bytes([payload[10], payload[11]]);
    Some(FinsResponse {
        header: FinsHeader::reply_to(&req_header),
        command_code: code,
        end_code: end_codes::COMMAND_FORMAT,
        payload: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::millis;
    use crate::plcsim::reference_fixture;

    fn emulator() -> Emulator {
        let cfg = reference_fixture();
        Emulator::new(&cfg.variables, &cfg.scan).unwrap()
    }

    fn fins_write_req(sid: u8, addr: u16, value: f64) -> Vec<u8> {
        let words = crate::plcsim::variable::value_to_words(value);
        frame::encode_request(&FinsRequest {
            header: FinsHeader::command(1, 0, sid),
            command: FinsCommand::MemoryAreaWrite {
                area_code: frame::AREA_DM_WORD,
                address: addr,
                bit: 0,
                count: 4,
                words: words.to_vec(),
            },
        })
        .unwrap()
    }

    fn fins_read_req(sid: u8, addr: u16) -> Vec<u8> {
        frame::encode_request(&FinsRequest {
            header: FinsHeader::command(1, 0, sid),
            command: FinsCommand::MemoryAreaRead {
                area_code: frame::AREA_DM_WORD,
                address: addr,
                bit: 0,
                count: 4,
            },
        })
        .unwrap()
    }

    #[test]
    fn copy_rule_moves_cin_to_cout() {
        let mut emu = emulator();
        emu.set_variable("CIn", 7.5);
        emu.scan_step(0);
        assert_eq!(emu.variable("COut"), Some(7.5));
    }

    #[test]
    fn idle_scan_changes_nothing() {
        let mut emu = emulator();
        let (out, report) = emu.scan_step(0);
        assert!(out.is_empty());
        assert_eq!(report.requests_processed(), 0);
        assert_eq!(emu.variable("CIn"), Some(0.0));
        assert_eq!(emu.variable("COut"), Some(0.0));
    }

    #[test]
    fn same_scan_write_then_read_sees_post_copy_value() {
        let mut emu = emulator();
        emu.deliver(InboundMessage {
            arrival: 100,
            proto: ProtocolId::Fins,
            client: ClientAddr::Sim(1),
            payload: fins_write_req(1, 0, 3.0),
        });
        emu.deliver(InboundMessage {
            arrival: 200,
            proto: ProtocolId::Fins,
            client: ClientAddr::Sim(1),
            payload: fins_read_req(2, 4),
        });
        let (out, report) = emu.scan_step(millis(1));
        assert_eq!(report.fins_writes, 1);
        assert_eq!(report.fins_reads, 1);
        assert_eq!(out.len(), 2);
        // Second response is the read, served post-copy.
        match frame::decode_frame(&out[1].payload).unwrap() {
            FinsFrame::Response(r) => {
                assert_eq!(r.end_code, end_codes::NORMAL);
                assert_eq!(
                    crate::plcsim::variable::words_to_value(&r.payload).unwrap(),
                    3.0
                );
            }
            _ => panic!("expected a response"),
        }
    }

    #[test]
    fn future_arrivals_stay_queued() {
        let mut emu = emulator();
        emu.deliver(InboundMessage {
            arrival: millis(5),
            proto: ProtocolId::Fins,
            client: ClientAddr::Sim(1),
            payload: fins_write_req(1, 0, 1.0),
        });
        let (out, _) = emu.scan_step(millis(1));
        assert!(out.is_empty());
        let (out, _) = emu.scan_step(millis(5));
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn unmapped_fins_write_faults_without_side_effects() {
        let mut emu = emulator();
        emu.deliver(InboundMessage {
            arrival: 0,
            proto: ProtocolId::Fins,
            client: ClientAddr::Sim(1),
            payload: fins_write_req(1, 900, 5.0),
        });
        let (out, report) = emu.scan_step(0);
        assert_eq!(report.fins_errors, 1);
        match frame::decode_frame(&out[0].payload).unwrap() {
            FinsFrame::Response(r) => assert_eq!(r.end_code, end_codes::ADDRESS_RANGE),
            _ => panic!("expected a response"),
        }
        assert_eq!(emu.variable("CIn"), Some(0.0));
    }

    #[test]
    fn lone_echo_departs_exactly_one_scan_later() {
        let mut emu = emulator();
        let bits = 8.25f64.to_bits();
        emu.deliver(InboundMessage {
            arrival: 10,
            proto: ProtocolId::Raw,
            client: ClientAddr::Sim(3),
            payload: bits.to_be_bytes().to_vec(),
        });
        let (out, _) = emu.scan_step(millis(1)); // scan 0: rung loads
        assert!(out.is_empty());
        let (out, report) = emu.scan_step(millis(2)); // scan 1: echo departs
        assert_eq!(report.raw_echoed, 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].payload, bits.to_be_bytes().to_vec());
    }

    #[test]
    fn two_echoes_same_scan_depart_one_and_two_scans_later() {
        let mut emu = emulator();
        for v in [1.0f64, 2.0] {
            emu.deliver(InboundMessage {
                arrival: 10,
                proto: ProtocolId::Raw,
                client: ClientAddr::Sim(4),
                payload: v.to_bits().to_be_bytes().to_vec(),
            });
        }
        let (out, _) = emu.scan_step(millis(1));
        assert!(out.is_empty());
        let (out, _) = emu.scan_step(millis(2));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].payload, 1.0f64.to_bits().to_be_bytes().to_vec());
        let (out, _) = emu.scan_step(millis(3));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].payload, 2.0f64.to_bits().to_be_bytes().to_vec());
    }

    #[test]
    fn query_answers_with_first_output_variable() {
        let mut emu = emulator();
        emu.set_variable("CIn", 42.5);
        emu.deliver(InboundMessage {
            arrival: 0,
            proto: ProtocolId::Raw,
            client: ClientAddr::Sim(5),
            payload: QUERY_PATTERN.to_be_bytes().to_vec(),
        });
        emu.scan_step(millis(1)); // loads; copy makes COut 42.5
        let (out, report) = emu.scan_step(millis(2));
        assert_eq!(report.raw_queries, 1);
        assert_eq!(out[0].payload, 42.5f64.to_bits().to_be_bytes().to_vec());
    }

    #[test]
    fn wrong_size_raw_payload_is_dropped() {
        let mut emu = emulator();
        emu.deliver(InboundMessage {
            arrival: 0,
            proto: ProtocolId::Raw,
            client: ClientAddr::Sim(6),
            payload: vec![1, 2, 3],
        });
        let (out, report) = emu.scan_step(millis(1));
        assert!(out.is_empty());
        assert_eq!(report.malformed_dropped, 1);
    }

    #[test]
    fn producer_link_publishes_post_copy_each_rpi() {
        let mut emu = emulator();
        emu.add_producer_link(TagLinkSpec {
            connection_id: 2,
            producer_tag: "COut".into(),
            consumers: vec![ClientAddr::Sim(9)],
            rpi: millis(1),
        })
        .unwrap();
        emu.set_variable("CIn", 4.0);
        let (out, report) = emu.scan_step(0);
        assert_eq!(report.link_published, 1);
        match wire::decode(&out[0].payload).unwrap() {
            CipMessage::LinkData(m) => {
                assert_eq!(m.connection_id, 2);
                assert_eq!(m.sequence, 1);
                assert_eq!(m.value, 4.0); // post-copy value
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stale_link_data_is_dropped() {
        let mut emu = emulator();
        emu.add_consumer_link(1, "CIn").unwrap();
        let mk = |seq: u32, value: f64| InboundMessage {
            arrival: 0,
            proto: ProtocolId::Cip,
            client: ClientAddr::Sim(7),
            payload: wire::encode(&CipMessage::LinkData(LinkMessage {
                connection_id: 1,
                sequence: seq,
                value,
                produce_timestamp: 0,
            }))
            .unwrap(),
        };
        emu.deliver(mk(5, 1.0));
        emu.deliver(mk(4, 2.0)); // stale, must not apply
        emu.deliver(mk(6, 3.0));
        let (_, report) = emu.scan_step(0);
        assert_eq!(report.link_applied, 2);
        assert_eq!(report.link_stale_dropped, 1);
        assert_eq!(emu.variable("CIn"), Some(3.0));
    }

    #[test]
    fn duplicate_connection_id_rejected() {
        let mut emu = emulator();
        emu.add_consumer_link(1, "CIn").unwrap();
        assert_eq!(
            emu.add_producer_link(TagLinkSpec {
                connection_id: 1,
                producer_tag: "COut".into(),
                consumers: vec![ClientAddr::Sim(1)],
                rpi: millis(1),
            }),
            Err(LinkError::DuplicateConnection(1))
        );
    }

    #[test]
    fn cip_write_to_output_tag_is_a_direction_error() {
        let mut emu = emulator();
        emu.deliver(InboundMessage {
            arrival: 0,
            proto: ProtocolId::Cip,
            client: ClientAddr::Sim(8),
            payload: wire::encode(&CipMessage::WriteReq {
                req_id: 11,
                name: "COut".into(),
                value: 1.0,
            })
            .unwrap(),
        });
        let (out, report) = emu.scan_step(0);
        assert_eq!(report.cip_errors, 1);
        match wire::decode(&out[0].payload).unwrap() {
            CipMessage::WriteResp { req_id, status } => {
                assert_eq!(req_id, 11);
                assert_eq!(status, Status::Direction);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_fins_with_salvageable_header_gets_error_response() {
        let mut emu = emulator();
        let mut bad = fins_read_req(9, 0);
        bad[11] = 0x99; // unsupported command code
        emu.deliver(InboundMessage {
            arrival: 0,
            proto: ProtocolId::Fins,
            client: ClientAddr::Sim(2),
            payload: bad,
        });
        let (out, report) = emu.scan_step(0);
        assert_eq!(report.fins_errors, 1);
        match frame::decode_frame(&out[0].payload).unwrap() {
            FinsFrame::Response(r) => {
                assert_eq!(r.end_code, end_codes::COMMAND_FORMAT);
                assert_eq!(r.header.sid, 9);
            }
            _ => panic!("expected a response"),
        }
    }
}
