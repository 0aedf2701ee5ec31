//! Report assembly and rendering: the comparison table (markdown), full
//! stats (csv/json), and the samples CSV format.
//!
//! External durations are integer microseconds; the markdown table renders
//! means in milliseconds with two decimals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{LatencySample, LatencyStats, Outcome};
use super::trial::{Mode, Protocol, TrialKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Ok { stats: LatencyStats },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub protocol: Protocol,
    pub kind: TrialKind,
    pub outcome: CellOutcome,
}

/// The full benchmark report: config echo plus one cell per
/// (protocol, kind) pair that was run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: Mode,
    pub trials: u64,
    pub warmup: u64,
    pub seed: u64,
    pub clock_resolution_ns: u64,
    pub emitted_unix_s: u64,
    pub cells: Vec<ReportCell>,
}

impl Report {
    pub fn cell(&self, protocol: Protocol, kind: TrialKind) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.protocol == protocol && c.kind == kind)
    }

    pub fn mean_us(&self, protocol: Protocol, kind: TrialKind) -> Option<f64> {
        match &self.cell(protocol, kind)?.outcome {
            CellOutcome::Ok { stats } => Some(stats.mean_us),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Some(ReportFormat::Markdown),
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

fn fmt_mean_ms(cell: Option<&ReportCell>) -> String {
    match cell.map(|c| &c.outcome) {
        Some(CellOutcome::Ok { stats }) => format!("{:.2}", stats.mean_us / 1_000.0),
        Some(CellOutcome::Failed { .. }) => "failed".to_string(),
        None => "-".to_string(),
    }
}

/// Render the comparison table / stats dump.
pub fn format_report(report: &Report, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Markdown => markdown(report).into_bytes(),
        ReportFormat::Csv => csv(report).into_bytes(),
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
            bytes.push(b'\n');
            bytes
        }
    }
}

fn markdown(report: &Report) -> String {
    let mut out = String::new();
    out.push_str("| Protocol | Read, ms | Write, ms | Write/Read Cycle, ms |\n");
    out.push_str("|----------|----------|-----------|----------------------|\n");
    let mut seen: Vec<Protocol> = Vec::new();
    for cell in &report.cells {
        if !seen.contains(&cell.protocol) {
            seen.push(cell.protocol);
        }
    }
    for protocol in seen {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            protocol.label(),
            fmt_mean_ms(report.cell(protocol, TrialKind::Read)),
            fmt_mean_ms(report.cell(protocol, TrialKind::Write)),
            fmt_mean_ms(report.cell(protocol, TrialKind::Cycle)),
        ));
    }
    out
}

fn csv(report: &Report) -> String {
    let mut out = String::from(
        "protocol,kind,status,count,mean_us,median_us,p95_us,p99_us,min_us,max_us,stddev_us\n",
    );
    for cell in &report.cells {
        match &cell.outcome {
            CellOutcome::Ok { stats } => out.push_str(&format!(
                "{},{},ok,{},{:.3},{},{},{},{},{},{:.3}\n",
                cell.protocol.label(),
                cell.kind.label(),
                stats.count,
                stats.mean_us,
                stats.median_us,
                stats.p95_us,
                stats.p99_us,
                stats.min_us,
                stats.max_us,
                stats.stddev_us,
            )),
            CellOutcome::Failed { reason } => out.push_str(&format!(
                "{},{},failed:{},,,,,,,,\n",
                cell.protocol.label(),
                cell.kind.label(),
                reason.replace(',', ";"),
            )),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Samples CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum SamplesCsvError {
    #[error("line {0}: expected `trial_index,latency_us,outcome`")]
    Malformed(usize),
    #[error("line {line}: bad number: {text}")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: unknown outcome {text:?}")]
    BadOutcome { line: usize, text: String },
}

pub fn samples_to_csv(samples: &[LatencySample]) -> String {
    let mut out = String::from("trial_index,latency_us,outcome\n");
    for s in samples {
        match s.latency_us {
            Some(us) => out.push_str(&format!(
                "{},{},{}\n",
                s.trial_index,
                us,
                s.outcome.as_str()
            )),
            None => out.push_str(&format!("{},,{}\n", s.trial_index, s.outcome.as_str())),
        }
    }
    out
}

pub fn samples_from_csv(text: &str) -> Result<Vec<LatencySample>, SamplesCsvError> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("trial_index")) {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(idx), Some(lat), Some(out), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(SamplesCsvError::Malformed(i + 1));
        };
        let trial_index: u64 = idx.parse().map_err(|_| SamplesCsvError::BadNumber {
            line: i + 1,
            text: idx.to_string(),
        })?;
        let outcome = Outcome::parse(out).ok_or_else(|| SamplesCsvError::BadOutcome {
            line: i + 1,
            text: out.to_string(),
        })?;
        let latency_us = if lat.is_empty() {
            None
        } else {
            Some(lat.parse().map_err(|_| SamplesCsvError::BadNumber {
                line: i + 1,
                text: lat.to_string(),
            })?)
        };
        if (outcome == Outcome::Ok) != latency_us.is_some() {
            return Err(SamplesCsvError::Malformed(i + 1));
        }
        samples.push(LatencySample {
            trial_index,
            latency_us,
            outcome,
        });
    }
    Ok(samples)
}
