//! Mode-independent state of the polling gateway: the item table, poll
//! epochs, quality bookkeeping and the synchronous-read freshness rule.
//!
//! Drivers differ per execution mode (the simulation schedules tick events,
//! loopback mode runs a poll thread), but both feed this core through
//! `begin_poll` / `on_poll_result`.

use std::collections::VecDeque;

use crate::clock::Nanos;
use crate::plcsim::Publish;

const HISTORY_CAP: usize = 256;

/// OPC-style validity marker on a cached item value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Quality {
    Good,
    Uncertain,
    Bad,
}

/// One auto-created item: a cached copy of a published PLC tag.
#[derive(Debug, Clone)]
pub struct ItemState {
    pub name: String,
    pub value_bits: u64,
    pub quality: Quality,
    pub last_refresh: Option<Nanos>,
    /// Device poll epoch at the item's last successful refresh.
    pub refresh_epoch: u64,
}

/// Completed device poll.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollCompletion {
    pub epoch: u64,
    pub started: Nanos,
    pub completed: Nanos,
}

/// What one poll did, for observability and CSV export.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PollReport {
    pub epoch: u64,
    pub started: Nanos,
    pub completed: Nanos,
    pub ok: u32,
    pub failed: Vec<String>,
}

pub struct GatewayCore {
    scan_rate: Nanos,
    items: Vec<ItemState>,
    device_epoch: u64,
    in_flight: Option<InFlight>,
    completions: VecDeque<PollCompletion>,
    reports: VecDeque<PollReport>,
    skipped_ticks: u64,
}

struct InFlight {
    started: Nanos,
    outstanding: usize,
    ok: u32,
    failed: Vec<String>,
}

impl GatewayCore {
    pub fn new(scan_rate: Nanos) -> Self {
        Self {
            scan_rate,
            items: Vec::new(),
            device_epoch: 0,
            in_flight: None,
            completions: VecDeque::new(),
            reports: VecDeque::new(),
            skipped_ticks: 0,
        }
    }

    pub fn scan_rate(&self) -> Nanos {
        self.scan_rate
    }

    /// One item per published PLC tag; quality Bad until the first poll.
    pub fn create_items(&mut self, tags: &[(String, Publish)]) {
        self.items = tags
            .iter()
            .map(|(name, _)| ItemState {
                name: name.clone(),
                value_bits: 0,
                quality: Quality::Bad,
                last_refresh: None,
                refresh_epoch: 0,
            })
            .collect();
    }

    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|i| i.name == name)
    }

    pub fn item(&self, idx: usize) -> &ItemState {
        &self.items[idx]
    }

    pub fn item_name(&self, idx: usize) -> &str {
        &self.items[idx].name
    }

    pub fn item_names(&self) -> Vec<String> {
        self.items.iter().map(|i| i.name.clone()).collect()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn device_epoch(&self) -> u64 {
        self.device_epoch
    }

    pub fn skipped_ticks(&self) -> u64 {
        self.skipped_ticks
    }

    pub fn reports(&self) -> &VecDeque<PollReport> {
        &self.reports
    }

    /// Start a poll at `now`: returns the item indices to read. If the
    /// previous poll is still outstanding the tick is skipped and cached
    /// values are downgraded to Uncertain.
    pub fn begin_poll(&mut self, now: Nanos) -> Option<Vec<usize>> {
        if self.in_flight.is_some() {
            self.skipped_ticks += 1;
            for item in &mut self.items {
                if item.quality == Quality::Good {
                    item.quality = Quality::Uncertain;
                }
            }
            return None;
        }
        if self.items.is_empty() {
            // An empty device still completes an (empty) epoch, so sync
            // readers of a zero-item device do not hang forever.
            self.complete(now, now, 0, Vec::new());
            return None;
        }
        self.in_flight = Some(InFlight {
            started: now,
            outstanding: self.items.len(),
            ok: 0,
            failed: Vec::new(),
        });
        Some((0..self.items.len()).collect())
    }

    /// Record one item read result. Returns the completion when this was the
    /// poll's last outstanding item.
    pub fn on_poll_result(
        &mut self,
        idx: usize,
        result: Result<u64, ()>,
        now: Nanos,
    ) -> Option<PollCompletion> {
        let flight = self.in_flight.as_mut()?;
        match result {
            Ok(bits) => {
                flight.ok += 1;
                let item = &mut self.items[idx];
                item.value_bits = bits;
                item.quality = Quality::Good;
                item.last_refresh = Some(now);
            }
            Err(()) => {
                flight.failed.push(self.items[idx].name.clone());
                self.items[idx].quality = Quality::Bad;
            }
        }
        let flight = self.in_flight.as_mut().unwrap();
        flight.outstanding -= 1;
        if flight.outstanding > 0 {
            return None;
        }
        let InFlight {
            started,
            ok,
            failed,
            ..
        } = self.in_flight.take().unwrap();
        Some(self.complete(started, now, ok, failed))
    }

    fn complete(
        &mut self,
        started: Nanos,
        now: Nanos,
        ok: u32,
        failed: Vec<String>,
    ) -> PollCompletion {
        self.device_epoch += 1;
        for item in &mut self.items {
            if item.quality == Quality::Good {
                item.refresh_epoch = self.device_epoch;
            }
        }
        let completion = PollCompletion {
            epoch: self.device_epoch,
            started,
            completed: now,
        };
        self.completions.push_back(completion);
        if self.completions.len() > HISTORY_CAP {
            self.completions.pop_front();
        }
        self.reports.push_back(PollReport {
            epoch: self.device_epoch,
            started,
            completed: now,
            ok,
            failed,
        });
        if self.reports.len() > HISTORY_CAP {
            self.reports.pop_front();
        }
        completion
    }

    /// Freshness rule behind synchronous reads: the first completed poll
    /// whose start is not earlier than the caller's request time.
    pub fn completion_started_at_or_after(&self, t: Nanos) -> Option<PollCompletion> {
        self.completions.iter().find(|c| c.started >= t).copied()
    }

    pub fn completions(&self) -> &VecDeque<PollCompletion> {
        &self.completions
    }

    /// CSV export of the retained poll reports.
    pub fn reports_csv(&self) -> String {
        let mut out = String::from("epoch,started_us,completed_us,ok,failed\n");
        for r in &self.reports {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                crate::clock::to_micros_round(r.started),
                crate::clock::to_micros_round(r.completed),
                r.ok,
                r.failed.join(";"),
            ));
        }
        out
    }
}
