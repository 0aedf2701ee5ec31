//! Loopback execution mode: the emulator scan loop runs on a real thread
//! over real UDP sockets, driven by the monotonic wall clock. This is the
//! honest-measurement mode; the simulated mode is the deterministic one.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::ciplite::wire::{self, CipMessage, LinkMessage};
use crate::ciplite::{LinkCycleApi, LinkReadError};
use crate::clock::Nanos;
use crate::plcsim::emulator::{ClientAddr, Emulator, InboundMessage, ProtocolId, TagLinkSpec};
use crate::plcsim::variable::ConfigError;
use crate::plcsim::EmulatorConfig;

/// UDP ports for the three endpoints; 0 binds an ephemeral port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopbackPorts {
    pub fins: u16,
    pub cip: u16,
    pub raw: u16,
}

impl Default for LoopbackPorts {
    fn default() -> Self {
        Self {
            fins: 9600,
            cip: 44818,
            raw: 9601,
        }
    }
}

impl LoopbackPorts {
    /// All ephemeral; useful when several fixtures run concurrently.
    pub const AUTO: LoopbackPorts = LoopbackPorts {
        fins: 0,
        cip: 0,
        raw: 0,
    };
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("link error: {0}")]
    Link(#[from] crate::plcsim::emulator::LinkError),
    #[error("port bind failure: {0}")]
    Bind(#[from] io::Error),
}

/// Cumulative counters mirrored out of the server thread.
#[derive(Debug, Default)]
pub struct LoopbackCounters {
    pub scans: AtomicU64,
    pub requests_processed: AtomicU64,
    pub fins_served: AtomicU64,
    pub malformed_dropped: AtomicU64,
}

/// Running loopback emulator. Dropping it stops the scan thread.
pub struct LoopbackServer {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    pub fins_addr: SocketAddr,
    pub cip_addr: SocketAddr,
    pub raw_addr: SocketAddr,
    pub counters: Arc<LoopbackCounters>,
    epoch: Instant,
}

fn bind(port: u16) -> io::Result<UdpSocket> {
    let socket = UdpSocket::bind(("127.0.0.1", port))?;
    socket.set_nonblocking(true)?;
    Ok(socket)
}

impl LoopbackServer {
    /// Bind the three endpoints and start the scan thread.
    ///
    /// `consumer_links` are PC->PLC connections (connection id, Input tag);
    /// `producer_links` are PLC->PC connections with their consumer socket
    /// addresses already known.
    pub fn start(
        cfg: &EmulatorConfig,
        ports: LoopbackPorts,
        consumer_links: &[(u32, String)],
        producer_links: &[TagLinkSpec],
        epoch: Instant,
        verbose: bool,
    ) -> Result<Self, StartupError> {
        let mut emu = Emulator::new(&cfg.variables, &cfg.scan)?;
        for (conn, tag) in consumer_links {
            emu.add_consumer_link(*conn, tag)?;
        }
        for link in producer_links {
            emu.add_producer_link(link.clone())?;
        }
        let fins = bind(ports.fins)?;
        let cip = bind(ports.cip)?;
        let raw = bind(ports.raw)?;
        let fins_addr = fins.local_addr()?;
        let cip_addr = cip.local_addr()?;
        let raw_addr = raw.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let counters = Arc::new(LoopbackCounters::default());
        let thread = {
            let stop = Arc::clone(&stop);
            let counters = Arc::clone(&counters);
            std::thread::Builder::new()
                .name("plc-scan".into())
                .spawn(move || {
                    scan_loop(&mut emu, [fins, cip, raw], epoch, &stop, &counters, verbose)
                })?
        };
        Ok(Self {
            stop,
            thread: Some(thread),
            fins_addr,
            cip_addr,
            raw_addr,
            counters,
            epoch,
        })
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    /// Keep serving for `duration` of wall time, then return. The scan
    /// thread keeps running until the server is dropped.
    pub fn run_for(&self, duration: Duration) {
        std::thread::sleep(duration);
    }

    pub fn scans(&self) -> u64 {
        self.counters.scans.load(Ordering::Relaxed)
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn drain_socket(socket: &UdpSocket, proto: ProtocolId, now: Nanos, emu: &mut Emulator) {
    let mut buf = [0u8; 2048];
    loop {
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => emu.deliver(InboundMessage {
                arrival: now,
                proto,
                client: ClientAddr::Net(from),
                payload: buf[..n].to_vec(),
            }),
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut =>
            {
                break
            }
            Err(_) => break,
        }
    }
}

/// Sleep-then-spin until the epoch-relative target, for sub-millisecond
/// alignment without burning a whole core. Sleeps in bounded chunks so the
/// stop flag stays responsive; returns false once stopped.
fn wait_until(epoch: Instant, target: Nanos, stop: &AtomicBool) -> bool {
    const MAX_CHUNK: Nanos = 2_000_000;
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = epoch.elapsed().as_nanos() as Nanos;
        if now >= target {
            return true;
        }
        let remaining = target - now;
        if remaining > 300_000 {
            std::thread::sleep(Duration::from_nanos((remaining - 200_000).min(MAX_CHUNK)));
        } else {
            std::hint::spin_loop();
        }
    }
}

fn scan_loop(
    emu: &mut Emulator,
    sockets: [UdpSocket; 3],
    epoch: Instant,
    stop: &AtomicBool,
    counters: &LoopbackCounters,
    verbose: bool,
) {
    let [fins, cip, raw] = sockets;
    let period = emu.task_period();
    let mut next_scan = epoch.elapsed().as_nanos() as Nanos + period;
    while !stop.load(Ordering::Relaxed) {
        if !wait_until(epoch, next_scan, stop) {
            break;
        }
        let now = epoch.elapsed().as_nanos() as Nanos;
        drain_socket(&fins, ProtocolId::Fins, now, emu);
        drain_socket(&cip, ProtocolId::Cip, now, emu);
        drain_socket(&raw, ProtocolId::Raw, now, emu);
        let (outs, report) = emu.scan_step(now);
        for o in outs {
            let ClientAddr::Net(addr) = o.dest else {
                continue;
            };
            let socket = match o.proto {
                ProtocolId::Fins => &fins,
                ProtocolId::Cip => &cip,
                ProtocolId::Raw => &raw,
            };
            let _ = socket.send_to(&o.payload, addr);
        }
        counters.scans.fetch_add(1, Ordering::Relaxed);
        counters
            .requests_processed
            .fetch_add(report.requests_processed() as u64, Ordering::Relaxed);
        counters
            .fins_served
            .fetch_add(report.fins_served() as u64, Ordering::Relaxed);
        counters
            .malformed_dropped
            .fetch_add(report.malformed_dropped as u64, Ordering::Relaxed);
        if verbose {
            println!("{}", report.log_line());
        }
        next_scan += period;
        // A stalled host may owe several scans; skip to the next boundary.
        let now = epoch.elapsed().as_nanos() as Nanos;
        while next_scan <= now {
            next_scan += period;
        }
    }
}

/// Last link message seen by a loopback consumer.
#[derive(Debug, Clone, Copy)]
struct LoopConsumerSample {
    value_bits: u64,
    sequence: u32,
    produce_timestamp: Nanos,
}

/// PC-side consumer socket with its receive thread.
pub struct LoopbackConsumer {
    cell: Arc<Mutex<Option<LoopConsumerSample>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    addr: SocketAddr,
    epoch: Instant,
}

impl LoopbackConsumer {
    /// Bind the consumer socket. Must happen before the server starts so the
    /// address can be listed in the producer link.
    pub fn bind(connection_id: u32, epoch: Instant) -> io::Result<Self> {
        let socket = UdpSocket::bind(("127.0.0.1", 0))?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let addr = socket.local_addr()?;
        let cell: Arc<Mutex<Option<LoopConsumerSample>>> = Arc::new(Mutex::new(None));
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let cell = Arc::clone(&cell);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("link-consumer".into())
                .spawn(move || {
                    let mut buf = [0u8; 256];
                    while !stop.load(Ordering::Relaxed) {
                        match socket.recv_from(&mut buf) {
                            Ok((n, _)) => {
                                if let Ok(CipMessage::LinkData(m)) = wire::decode(&buf[..n]) {
                                    if m.connection_id != connection_id {
                                        continue;
                                    }
                                    let mut cell = cell.lock().unwrap();
                                    let stale =
                                        cell.map(|s| m.sequence <= s.sequence).unwrap_or(false);
                                    if !stale {
                                        *cell = Some(LoopConsumerSample {
                                            value_bits: m.value.to_bits(),
                                            sequence: m.sequence,
                                            produce_timestamp: m.produce_timestamp,
                                        });
                                    }
                                }
                            }
                            Err(_) => continue,
                        }
                    }
                })?
        };
        Ok(Self {
            cell,
            stop,
            thread: Some(thread),
            addr,
            epoch,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn read(&self) -> Option<(f64, Nanos)> {
        let now = self.epoch.elapsed().as_nanos() as Nanos;
        self.cell.lock().unwrap().map(|s| {
            (
                f64::from_bits(s.value_bits),
                now.saturating_sub(s.produce_timestamp),
            )
        })
    }
}

impl Drop for LoopbackConsumer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// PC-side producer emitting LinkData every RPI from its own thread.
pub struct LoopbackProducer {
    value_bits: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl LoopbackProducer {
    pub fn start(
        connection_id: u32,
        target: SocketAddr,
        rpi: Nanos,
        epoch: Instant,
    ) -> io::Result<Self> {
        let socket = UdpSocket::bind(("127.0.0.1", 0))?;
        let value_bits = Arc::new(AtomicU64::new(0.0f64.to_bits()));
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let value_bits = Arc::clone(&value_bits);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("link-producer".into())
                .spawn(move || {
                    let mut sequence = 0u32;
                    let mut next = epoch.elapsed().as_nanos() as Nanos;
                    while !stop.load(Ordering::Relaxed) {
                        if !wait_until(epoch, next, &stop) {
                            break;
                        }
                        let now = epoch.elapsed().as_nanos() as Nanos;
                        sequence = sequence.wrapping_add(1);
                        let msg = CipMessage::LinkData(LinkMessage {
                            connection_id,
                            sequence,
                            value: f64::from_bits(value_bits.load(Ordering::Acquire)),
                            produce_timestamp: now,
                        });
                        let _ = socket.send_to(&wire::encode(&msg).expect("encodes"), target);
                        next += rpi;
                        let now = epoch.elapsed().as_nanos() as Nanos;
                        while next <= now {
                            next += rpi;
                        }
                    }
                })?
        };
        Ok(Self {
            value_bits,
            stop,
            thread: Some(thread),
        })
    }

    pub fn set(&self, value: f64) {
        self.value_bits.store(value.to_bits(), Ordering::Release);
    }
}

impl Drop for LoopbackProducer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Both directions of the cyclic fixture over real sockets.
pub struct LinkedPairLoop {
    producer: LoopbackProducer,
    consumer: LoopbackConsumer,
    poll_timeout: Nanos,
    epoch: Instant,
    last_latency: Option<Nanos>,
}

impl LinkedPairLoop {
    pub fn new(
        producer: LoopbackProducer,
        consumer: LoopbackConsumer,
        poll_timeout: Nanos,
        epoch: Instant,
    ) -> Self {
        Self {
            producer,
            consumer,
            poll_timeout,
            epoch,
            last_latency: None,
        }
    }
}

impl LinkCycleApi for LinkedPairLoop {
    fn set_local(&mut self, value: f64) {
        self.producer.set(value);
    }

    fn linked_read(&mut self) -> Result<(f64, Nanos), LinkReadError> {
        self.consumer.read().ok_or(LinkReadError::NotReady)
    }

    fn linked_cycle(&mut self, value: f64) -> Result<f64, LinkReadError> {
        let start = self.epoch.elapsed().as_nanos() as Nanos;
        let deadline = start + self.poll_timeout;
        self.producer.set(value);
        loop {
            let hit = self
                .consumer
                .cell
                .lock()
                .unwrap()
                .map(|s| s.value_bits == value.to_bits())
                .unwrap_or(false);
            let now = self.epoch.elapsed().as_nanos() as Nanos;
            if hit {
                self.last_latency = Some(now - start);
                return Ok(value);
            }
            if now >= deadline {
                return Err(LinkReadError::Timeout);
            }
            std::thread::sleep(Duration::from_micros(50));
        }
    }

    fn last_latency(&self) -> Option<Nanos> {
        self.last_latency
    }

    fn now(&self) -> Nanos {
        self.epoch.elapsed().as_nanos() as Nanos
    }
}
