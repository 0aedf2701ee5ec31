//! Loopback gateway driver: a poll thread request-all-items every scan
//! rate, a writer thread for asynchronous writes, and condvar-synchronized
//! callers. All three paths own their own explicit client socket.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::ciplite::{CipClient, CipClientError};
use crate::clock::Nanos;
use crate::transport::UdpTransport;

use super::core::{GatewayCore, PollReport, Quality};
use super::{OpcError, OpcToken};

type Shared = Arc<(Mutex<GatewayCore>, Condvar)>;

struct AsyncJob {
    item: String,
    value: f64,
    slot: Arc<Mutex<Option<Result<(), OpcError>>>>,
}

/// Loopback gateway client. One logical caller.
pub struct OpcLoopClient {
    shared: Shared,
    writer: mpsc::Sender<AsyncJob>,
    sync_client: CipClient<UdpTransport>,
    scan_rate: Nanos,
    read_timeout: Nanos,
    epoch: Instant,
    stop: Arc<AtomicBool>,
    poll_thread: Option<JoinHandle<()>>,
    writer_thread: Option<JoinHandle<()>>,
    last_latency: Option<Nanos>,
}

fn cip_err(e: CipClientError) -> OpcError {
    match e {
        CipClientError::Timeout => OpcError::Timeout,
        CipClientError::UnknownTag(t) => OpcError::UnknownItem(t),
        other => OpcError::Remote(other.to_string()),
    }
}

impl OpcLoopClient {
    /// Connect through the Channel -> Device hierarchy: the channel names
    /// the driver binding, the device carries the endpoint and scan rate.
    pub fn connect_device(
        _channel: &super::ChannelConfig,
        device: &super::DeviceConfig,
        read_timeout: Nanos,
        epoch: Instant,
    ) -> Result<Self, OpcError> {
        let addr: SocketAddr = device
            .address
            .parse()
            .map_err(|e| OpcError::Connection(format!("bad device address: {e}")))?;
        Self::connect(addr, device.scan_rate, read_timeout, epoch)
    }

    /// Connect to the device, auto-create items for its published tags and
    /// start polling.
    pub fn connect(
        device: SocketAddr,
        scan_rate: Nanos,
        read_timeout: Nanos,
        epoch: Instant,
    ) -> Result<Self, OpcError> {
        let mut list_client = CipClient::new(
            UdpTransport::connect(device, epoch)
                .map_err(|e| OpcError::Connection(e.to_string()))?,
            read_timeout,
        );
        let tags = list_client
            .list_tags()
            .map_err(|e| OpcError::Connection(e.to_string()))?;
        let mut core = GatewayCore::new(scan_rate);
        core.create_items(&tags);
        let shared: Shared = Arc::new((Mutex::new(core), Condvar::new()));
        let stop = Arc::new(AtomicBool::new(false));

        let poll_thread = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            let mut poll_client = CipClient::new(
                UdpTransport::connect(device, epoch)
                    .map_err(|e| OpcError::Connection(e.to_string()))?,
                read_timeout,
            );
            std::thread::Builder::new()
                .name("opc-poll".into())
                .spawn(move || {
                    let mut next = epoch.elapsed().as_nanos() as Nanos;
                    while !stop.load(Ordering::Relaxed) {
                        let now = epoch.elapsed().as_nanos() as Nanos;
                        if now < next {
                            std::thread::sleep(Duration::from_nanos((next - now).min(2_000_000)));
                            continue;
                        }
                        let started = epoch.elapsed().as_nanos() as Nanos;
                        let plan = shared.0.lock().unwrap().begin_poll(started);
                        if let Some(indices) = plan {
                            for idx in indices {
                                let name = shared.0.lock().unwrap().item_name(idx).to_string();
                                let result = poll_client
                                    .read_tag(&name)
                                    .map(|v| v.to_bits())
                                    .map_err(|_| ());
                                let now = epoch.elapsed().as_nanos() as Nanos;
                                let done =
                                    shared.0.lock().unwrap().on_poll_result(idx, result, now);
                                if done.is_some() {
                                    shared.1.notify_all();
                                }
                            }
                        }
                        next += scan_rate;
                        let now = epoch.elapsed().as_nanos() as Nanos;
                        while next <= now {
                            next += scan_rate;
                        }
                    }
                })
                .map_err(|e| OpcError::Connection(e.to_string()))?
        };

        let (writer, jobs) = mpsc::channel::<AsyncJob>();
        let writer_thread = {
            let mut write_client = CipClient::new(
                UdpTransport::connect(device, epoch)
                    .map_err(|e| OpcError::Connection(e.to_string()))?,
                read_timeout,
            );
            std::thread::Builder::new()
                .name("opc-writer".into())
                .spawn(move || {
                    while let Ok(job) = jobs.recv() {
                        let result = write_client
                            .write_tag(&job.item, job.value)
                            .map_err(cip_err);
                        *job.slot.lock().unwrap() = Some(result);
                    }
                })
                .map_err(|e| OpcError::Connection(e.to_string()))?
        };

        Ok(Self {
            shared,
            writer,
            sync_client: list_client,
            scan_rate,
            read_timeout,
            epoch,
            stop,
            poll_thread: Some(poll_thread),
            writer_thread: Some(writer_thread),
            last_latency: None,
        })
    }

    pub fn item_names(&self) -> Vec<String> {
        self.shared.0.lock().unwrap().item_names()
    }

    pub fn poll_reports(&self) -> Vec<PollReport> {
        self.shared
            .0
            .lock()
            .unwrap()
            .reports()
            .iter()
            .cloned()
            .collect()
    }

    pub fn poll_reports_csv(&self) -> String {
        self.shared.0.lock().unwrap().reports_csv()
    }

    fn wall_now(&self) -> Nanos {
        self.epoch.elapsed().as_nanos() as Nanos
    }
}

impl Drop for OpcLoopClient {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.poll_thread.take() {
            let _ = t.join();
        }
        // Closing the channel ends the writer thread.
        let (tx, _) = mpsc::channel();
        let _ = std::mem::replace(&mut self.writer, tx);
        if let Some(t) = self.writer_thread.take() {
            let _ = t.join();
        }
    }
}

/// Async write completion slot for the loopback gateway.
pub struct OpcLoopToken {
    slot: Arc<Mutex<Option<Result<(), OpcError>>>>,
}

impl OpcToken for OpcLoopToken {
    fn poll(&mut self) -> Option<Result<(), OpcError>> {
        self.slot.lock().unwrap().clone()
    }

    fn wait(&mut self, timeout: Nanos) -> Result<(), OpcError> {
        let deadline = Instant::now() + Duration::from_nanos(timeout);
        loop {
            if let Some(r) = self.slot.lock().unwrap().clone() {
                return r;
            }
            if Instant::now() >= deadline {
                return Err(OpcError::Timeout);
            }
            std::thread::sleep(Duration::from_micros(100));
        }
    }
}

impl super::OpcApi for OpcLoopClient {
    type Token = OpcLoopToken;

    fn read_sync(&mut self, item: &str) -> Result<f64, OpcError> {
        let called = self.wall_now();
        let deadline = called + 2 * self.scan_rate + self.read_timeout;
        let (lock, cvar) = &*self.shared;
        let mut core = lock.lock().unwrap();
        let idx = core
            .item_index(item)
            .ok_or_else(|| OpcError::UnknownItem(item.to_string()))?;
        loop {
            if core.completion_started_at_or_after(called).is_some() {
                let state = core.item(idx);
                if state.quality == Quality::Bad {
                    return Err(OpcError::Quality(item.to_string()));
                }
                let value = f64::from_bits(state.value_bits);
                self.last_latency = Some(self.wall_now() - called);
                return Ok(value);
            }
            let now = self.wall_now();
            if now >= deadline {
                return Err(OpcError::Timeout);
            }
            let (guard, _) = cvar
                .wait_timeout(core, Duration::from_nanos(deadline - now))
                .unwrap();
            core = guard;
        }
    }

    fn write_sync(&mut self, item: &str, value: f64) -> Result<(), OpcError> {
        if self.shared.0.lock().unwrap().item_index(item).is_none() {
            return Err(OpcError::UnknownItem(item.to_string()));
        }
        let start = self.wall_now();
        self.sync_client.write_tag(item, value).map_err(cip_err)?;
        self.last_latency = Some(self.wall_now() - start);
        Ok(())
    }

    fn write_async(&mut self, item: &str, value: f64) -> OpcLoopToken {
        let slot = Arc::new(Mutex::new(None));
        if self.shared.0.lock().unwrap().item_index(item).is_none() {
            *slot.lock().unwrap() = Some(Err(OpcError::UnknownItem(item.to_string())));
            return OpcLoopToken { slot };
        }
        let job = AsyncJob {
            item: item.to_string(),
            value,
            slot: Arc::clone(&slot),
        };
        if self.writer.send(job).is_err() {
            *slot.lock().unwrap() = Some(Err(OpcError::Connection("writer stopped".into())));
        }
        OpcLoopToken { slot }
    }

    fn cycle(&mut self, write_item: &str, read_item: &str, value: f64) -> Result<f64, OpcError> {
        let started = self.wall_now();
        let overall = started + 8 * self.scan_rate + self.read_timeout;
        let _token = self.write_async(write_item, value);
        loop {
            let got = self.read_sync(read_item)?;
            if got.to_bits() == value.to_bits() {
                self.last_latency = Some(self.wall_now() - started);
                return Ok(got);
            }
            if self.wall_now() > overall {
                return Err(OpcError::Timeout);
            }
        }
    }

    fn last_latency(&self) -> Option<Nanos> {
        self.last_latency
    }

    fn now(&self) -> Nanos {
        self.wall_now()
    }
}
