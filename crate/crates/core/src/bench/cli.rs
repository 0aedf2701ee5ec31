//! Command-line interface: `serve`, `bench`, `compare`, `replay`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::clock::micros;
use crate::config::{parse_config, FileConfig};
use crate::plcsim::{LoopbackPorts, LoopbackServer, TagLinkSpec};

use super::compare::run_compare;
use super::report::{format_report, samples_from_csv, samples_to_csv, CellOutcome, ReportFormat};
use super::stats::{compute_stats, LatencyStats};
use super::trial::{run_trials, BenchConfig, Mode, Protocol, TrialKind};

#[derive(Parser, Debug)]
#[command(
    name = "scanbench",
    about = "Scan-cycle PLC emulator and protocol latency benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// `sim` (deterministic simulated channel) or `loopback` (real sockets).
    #[arg(long, default_value = "sim")]
    mode: String,
    /// Measured trials per cell.
    #[arg(long)]
    trials: Option<u64>,
    /// Leading trials excluded from statistics.
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Simulated one-way channel delay, microseconds.
    #[arg(long)]
    delay_us: Option<u64>,
    /// Simulated delivery jitter bound, microseconds.
    #[arg(long)]
    jitter_us: Option<u64>,
    /// Gateway poll interval, microseconds.
    #[arg(long)]
    scan_rate_us: Option<u64>,
    /// Tag link RPI, microseconds.
    #[arg(long)]
    rpi_us: Option<u64>,
    /// Emulator task period, microseconds.
    #[arg(long)]
    task_period_us: Option<u64>,
    /// Per-operation timeout, microseconds.
    #[arg(long)]
    timeout_us: Option<u64>,
    /// `auto` binds ephemeral loopback ports; `default` uses 9600/44818/9601.
    #[arg(long)]
    ports: Option<String>,
    #[arg(long)]
    fins_port: Option<u16>,
    #[arg(long)]
    cip_port: Option<u16>,
    #[arg(long)]
    raw_port: Option<u16>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the emulator on loopback sockets until interrupted.
    Serve {
        #[command(flatten)]
        common: CommonOpts,
        /// Log one structured ScanReport line per scan.
        #[arg(long)]
        verbose: bool,
        /// Stop after this many seconds (default: run until killed).
        #[arg(long)]
        duration_s: Option<u64>,
    },
    /// Run one (protocol, kind) benchmark cell.
    Bench {
        #[command(flatten)]
        common: CommonOpts,
        /// fins | cip | cip-linked | udp | opc
        #[arg(long)]
        protocol: String,
        /// read | write | cycle
        #[arg(long)]
        kind: String,
        /// FINS cycle: issue the read before the write acknowledgment.
        #[arg(long)]
        pipelined: bool,
        /// Write per-trial samples CSV here.
        #[arg(long, value_name = "FILE")]
        out_samples: Option<PathBuf>,
        /// Write the stats JSON document here.
        #[arg(long, value_name = "FILE")]
        out_stats: Option<PathBuf>,
    },
    /// Run the full 4-protocol x 3-kind matrix and emit the comparison table.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Output file (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// markdown | csv | json
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Recompute statistics from a samples CSV.
    Replay {
        /// Samples CSV produced by `bench --out-samples`.
        samples: PathBuf,
        /// Write the stats JSON here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out_stats: Option<PathBuf>,
    },
}

/// Stats JSON document emitted by `bench`.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StatsDoc {
    pub protocol: String,
    pub kind: String,
    pub mode: String,
    pub trials: u64,
    pub warmup: u64,
    pub warmup_non_ok: u64,
    pub seed: u64,
    pub clock_resolution_ns: u64,
    pub stats: LatencyStats,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, String> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn build_bench_config(common: &CommonOpts) -> Result<BenchConfig, String> {
    let mode = Mode::parse(&common.mode).ok_or_else(|| {
        format!(
            "unknown mode {:?} (expected `sim` or `loopback`)",
            common.mode
        )
    })?;
    let mut file = load_file_config(common.config.as_deref())?;
    if let Some(us) = common.delay_us {
        file.channel.one_way_delay = micros(us);
    }
    if let Some(us) = common.jitter_us {
        file.channel.jitter = micros(us);
    }
    if let Some(us) = common.scan_rate_us {
        file.scan_rate = micros(us);
    }
    if let Some(us) = common.rpi_us {
        file.rpi = micros(us);
    }
    if let Some(us) = common.task_period_us {
        file.emulator.scan.task_period = micros(us);
    }
    if let Some(us) = common.timeout_us {
        file.timeout = micros(us);
    }
    let mut ports = file.ports;
    match common.ports.as_deref() {
        Some("auto") => ports = LoopbackPorts::AUTO,
        Some("default") => ports = LoopbackPorts::default(),
        Some(other) => return Err(format!("unknown --ports value {other:?}")),
        None => {}
    }
    if let Some(p) = common.fins_port {
        ports.fins = p;
    }
    if let Some(p) = common.cip_port {
        ports.cip = p;
    }
    if let Some(p) = common.raw_port {
        ports.raw = p;
    }
    let defaults = BenchConfig::default();
    let trials = common.trials.unwrap_or(defaults.trials);
    if trials == 0 {
        return Err("--trials must be at least 1".into());
    }
    Ok(BenchConfig {
        protocol: defaults.protocol,
        kind: defaults.kind,
        mode,
        trials,
        warmup: common.warmup.unwrap_or(defaults.warmup),
        seed: common.seed,
        pipelined: false,
        fixture: file.emulator,
        channel: file.channel,
        rpi: file.rpi,
        scan_rate: file.scan_rate,
        timeout: file.timeout,
        ports,
    })
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<(), String> {
    match path {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| format!("cannot write {}: {e}", p.display()))
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| e.to_string())
        }
    }
}

fn cmd_serve(common: &CommonOpts, verbose: bool, duration_s: Option<u64>) -> Result<(), String> {
    let file = load_file_config(common.config.as_deref())?;
    let mut ports = file.ports;
    match common.ports.as_deref() {
        Some("auto") => ports = LoopbackPorts::AUTO,
        Some("default") => ports = LoopbackPorts::default(),
        Some(other) => return Err(format!("unknown --ports value {other:?}")),
        None => {}
    }
    if let Some(p) = common.fins_port {
        ports.fins = p;
    }
    if let Some(p) = common.cip_port {
        ports.cip = p;
    }
    if let Some(p) = common.raw_port {
        ports.raw = p;
    }
    let producer_links: Vec<TagLinkSpec> = file
        .links_out
        .iter()
        .map(|(conn, tag, addr)| TagLinkSpec {
            connection_id: *conn,
            producer_tag: tag.clone(),
            consumers: vec![crate::plcsim::ClientAddr::Net(*addr)],
            rpi: file.rpi,
        })
        .collect();
    let server = LoopbackServer::start(
        &file.emulator,
        ports,
        &file.links_in,
        &producer_links,
        Instant::now(),
        verbose,
    )
    .map_err(|e| e.to_string())?;
    eprintln!(
        "serving: fins={} cip={} raw={} task_period={}us",
        server.fins_addr,
        server.cip_addr,
        server.raw_addr,
        file.emulator.scan.task_period / 1_000,
    );
    match duration_s {
        Some(s) => server.run_for(Duration::from_secs(s)),
        None => loop {
            std::thread::sleep(Duration::from_secs(3600));
        },
    }
    Ok(())
}

fn cmd_bench(
    common: &CommonOpts,
    protocol: &str,
    kind: &str,
    pipelined: bool,
    out_samples: Option<&Path>,
    out_stats: Option<&Path>,
) -> Result<(), String> {
    let mut cfg = build_bench_config(common)?;
    cfg.protocol =
        Protocol::parse(protocol).ok_or_else(|| format!("unknown protocol {protocol:?}"))?;
    cfg.kind = TrialKind::parse(kind).ok_or_else(|| format!("unknown kind {kind:?}"))?;
    cfg.pipelined = pipelined;
    let out = run_trials(&cfg).map_err(|e| e.to_string())?;
    let stats = compute_stats(&out.samples).map_err(|e| e.to_string())?;
    if let Some(p) = out_samples {
        std::fs::write(p, samples_to_csv(&out.samples))
            .map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    let doc = StatsDoc {
        protocol: cfg.protocol.label().to_string(),
        kind: cfg.kind.label().to_string(),
        mode: cfg.mode.label().to_string(),
        trials: cfg.trials,
        warmup: cfg.warmup,
        warmup_non_ok: out.warmup_non_ok,
        seed: cfg.seed,
        clock_resolution_ns: out.clock_resolution_ns,
        stats: stats.clone(),
    };
    if let Some(p) = out_stats {
        let mut bytes = serde_json::to_vec_pretty(&doc).expect("serializes");
        bytes.push(b'\n');
        std::fs::write(p, bytes).map_err(|e| format!("cannot write {}: {e}", p.display()))?;
    }
    println!(
        "{} {} ({}): n={} mean={:.2}ms median={:.2}ms p95={:.2}ms p99={:.2}ms min={:.2}ms max={:.2}ms stddev={:.3}ms",
        cfg.protocol.label(),
        cfg.kind.label(),
        cfg.mode.label(),
        stats.count,
        stats.mean_us / 1_000.0,
        stats.median_us as f64 / 1_000.0,
        stats.p95_us as f64 / 1_000.0,
        stats.p99_us as f64 / 1_000.0,
        stats.min_us as f64 / 1_000.0,
        stats.max_us as f64 / 1_000.0,
        stats.stddev_us / 1_000.0,
    );
    Ok(())
}

fn cmd_compare(common: &CommonOpts, out: Option<&Path>, format: &str) -> Result<(), String> {
    let format = ReportFormat::parse(format).ok_or_else(|| format!("unknown format {format:?}"))?;
    let cfg = build_bench_config(common)?;
    let report = run_compare(&cfg);
    write_or_print(out, &format_report(&report, format))?;
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter_map(|c| match &c.outcome {
            CellOutcome::Failed { reason } => Some(format!(
                "{} {}: {}",
                c.protocol.label(),
                c.kind.label(),
                reason
            )),
            CellOutcome::Ok { .. } => None,
        })
        .collect();
    if !failed.is_empty() {
        return Err(format!(
            "{} cell(s) failed: {}",
            failed.len(),
            failed.join("; ")
        ));
    }
    Ok(())
}

fn cmd_replay(samples: &Path, out_stats: Option<&Path>) -> Result<(), String> {
    let text = std::fs::read_to_string(samples)
        .map_err(|e| format!("cannot read {}: {e}", samples.display()))?;
    let samples = samples_from_csv(&text).map_err(|e| e.to_string())?;
    let stats = compute_stats(&samples).map_err(|e| e.to_string())?;
    let mut bytes = serde_json::to_vec_pretty(&stats).expect("serializes");
    bytes.push(b'\n');
    write_or_print(out_stats, &bytes)
}

/// Entry point shared by the binary and the test suite. Returns the process
/// exit code: 0 on success, 1 on a failed run, 2 on a usage error.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (including --help/--version).
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Serve {
            common,
            verbose,
            duration_s,
        } => cmd_serve(common, *verbose, *duration_s),
        Command::Bench {
            common,
            protocol,
            kind,
            pipelined,
            out_samples,
            out_stats,
        } => cmd_bench(
            common,
            protocol,
            kind,
            *pipelined,
            out_samples.as_deref(),
            out_stats.as_deref(),
        ),
        Command::Compare {
            common,
            out,
            format,
        } => cmd_compare(common, out.as_deref(), format),
        Command::Replay { samples, out_stats } => cmd_replay(samples, out_stats.as_deref()),
    };
    match result {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
