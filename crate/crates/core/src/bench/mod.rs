//! Trial runner, statistics engine, report formatter and CLI.

pub mod cli;
pub mod compare;
pub mod report;
pub mod stats;
pub mod trial;

pub use cli::{cli_main, StatsDoc};
pub use compare::{run_compare, KINDS, ROWS};
pub use report::{
    format_report, samples_from_csv, samples_to_csv, CellOutcome, Report, ReportCell, ReportFormat,
};
pub use stats::{
    compute_stats, stats_from_latencies, stats_from_latencies_seq, LatencySample, LatencyStats,
    Outcome,
};
pub use trial::{
    build_sim_exec, run_trials, run_with_exec, BenchConfig, LoopbackFixture, Mode, NonceSeq,
    Protocol, RunError, RunOutput, TrialExec, TrialFailure, TrialKind,
};
