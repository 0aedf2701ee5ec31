//! The full comparison matrix: four protocol rows by three operation kinds.
//!
//! Cycle cells use each protocol's cyclic method, the way the original
//! numbers were produced: FINS pipelines the write/read pair, CIP rides the
//! tag data links, UDP echoes synchronously, the gateway pairs an ignored
//! async write with a sync read.
//!
//! In simulated mode every cell is an independent deterministic world, so
//! the matrix is evaluated data-parallel when the `parallel` feature is on
//! (results are identical either way). Loopback cells share one emulator
//! and run strictly sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::report::{CellOutcome, Report, ReportCell};
use super::stats::compute_stats;
use super::trial::{
    run_trials, run_with_exec, BenchConfig, LoopbackFixture, Mode, Protocol, TrialKind,
};

/// Matrix rows, in table order.
pub const ROWS: [Protocol; 4] = [Protocol::Fins, Protocol::Cip, Protocol::Udp, Protocol::Opc];
pub const KINDS: [TrialKind; 3] = [TrialKind::Read, TrialKind::Write, TrialKind::Cycle];

struct CellPlan {
    row: Protocol,
    kind: TrialKind,
    cfg: BenchConfig,
}

fn cell_seed(master: u64, row: usize, kind: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((row * 3 + kind + 1) as u64)
}

fn plan_cells(base: &BenchConfig) -> Vec<CellPlan> {
    let mut plans = Vec::with_capacity(12);
    for (ri, row) in ROWS.iter().enumerate() {
        for (ki, kind) in KINDS.iter().enumerate() {
            let mut cfg = base.clone();
            cfg.kind = *kind;
            cfg.seed = cell_seed(base.seed, ri, ki);
            cfg.protocol = match (row, kind) {
                // The CIP cycle number comes from the tag links.
                (Protocol::Cip, TrialKind::Cycle) => Protocol::CipLinked,
                _ => *row,
            };
            cfg.pipelined = *row == Protocol::Fins;
            plans.push(CellPlan {
                row: *row,
                kind: *kind,
                cfg,
            });
        }
    }
    plans
}

fn evaluate_sim_cell(plan: &CellPlan) -> ReportCell {
    let outcome = match run_trials(&plan.cfg) {
        Ok(out) => match compute_stats(&out.samples) {
            Ok(stats) => CellOutcome::Ok { stats },
            Err(e) => CellOutcome::Failed {
                reason: e.to_string(),
            },
        },
        Err(e) => CellOutcome::Failed {
            reason: e.to_string(),
        },
    };
    ReportCell {
        protocol: plan.row,
        kind: plan.kind,
        outcome,
    }
}

fn unix_now_s() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Run all twelve cells and assemble the report. `base.protocol`,
/// `base.kind` and `base.pipelined` are ignored; everything else applies to
/// every cell.
pub fn run_compare(base: &BenchConfig) -> Report {
    let plans = plan_cells(base);
    let cells: Vec<ReportCell> = match base.mode {
        Mode::Simulated => {
            #[cfg(feature = "parallel")]
            {
                plans.par_iter().map(evaluate_sim_cell).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                plans.iter().map(evaluate_sim_cell).collect()
            }
        }
        Mode::Loopback => {
            let mut cells = Vec::with_capacity(plans.len());
            match LoopbackFixture::start(base) {
                Ok(mut fixture) => {
                    for plan in &plans {
                        let outcome = match fixture.build_exec(&plan.cfg) {
                            Ok(mut exec) => match run_with_exec(&plan.cfg, exec.as_mut()) {
                                Ok(out) => match compute_stats(&out.samples) {
                                    Ok(stats) => CellOutcome::Ok { stats },
                                    Err(e) => CellOutcome::Failed {
                                        reason: e.to_string(),
                                    },
                                },
                                Err(e) => CellOutcome::Failed {
                                    reason: e.to_string(),
                                },
                            },
                            Err(e) => CellOutcome::Failed {
                                reason: e.to_string(),
                            },
                        };
                        cells.push(ReportCell {
                            protocol: plan.row,
                            kind: plan.kind,
                            outcome,
                        });
                    }
                }
                Err(e) => {
                    let reason = e.to_string();
                    for plan in &plans {
                        cells.push(ReportCell {
                            protocol: plan.row,
                            kind: plan.kind,
                            outcome: CellOutcome::Failed {
                                reason: reason.clone(),
                            },
                        });
                    }
                }
            }
            cells
        }
    };
    Report {
        mode: base.mode,
        trials: base.trials,
        warmup: base.warmup,
        seed: base.seed,
        clock_resolution_ns: match base.mode {
            Mode::Simulated => 1,
            Mode::Loopback => crate::clock::wall_clock_resolution_ns(),
        },
        emitted_unix_s: unix_now_s(),
        cells,
    }
}
