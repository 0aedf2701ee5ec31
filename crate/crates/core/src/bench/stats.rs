//! Latency sample aggregation: mean, nearest-rank percentiles, population
//! standard deviation.
//!
//! The mean uses an exact integer sum; the variance is accumulated over
//! fixed-size chunks combined in chunk order, so the parallel and the
//! sequential build produce bit-identical results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Timeout,
    Error,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Timeout => "timeout",
            Outcome::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(Outcome::Ok),
            "timeout" => Some(Outcome::Timeout),
            "error" => Some(Outcome::Error),
            _ => None,
        }
    }
}

/// One trial's record. Latency is present exactly for Ok outcomes, in
/// integer microseconds (the external duration unit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub trial_index: u64,
    pub latency_us: Option<u64>,
    pub outcome: Outcome,
}

impl LatencySample {
    pub fn ok(trial_index: u64, latency_us: u64) -> Self {
        Self {
            trial_index,
            latency_us: Some(latency_us),
            outcome: Outcome::Ok,
        }
    }

    pub fn failed(trial_index: u64, outcome: Outcome) -> Self {
        Self {
            trial_index,
            latency_us: None,
            outcome,
        }
    }
}

/// Aggregate of the Ok samples of a run. Durations in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_us: f64,
    pub median_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub min_us: u64,
    pub max_us: u64,
    pub stddev_us: f64,
}

impl LatencyStats {
    pub fn mean_ms(&self) -> f64 {
        self.mean_us / 1_000.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no Ok samples to aggregate")]
    Empty,
}

/// Nearest-rank percentile over a sorted slice: the smallest value such
/// that at least p percent of the samples are <= it.
fn nearest_rank(sorted: &[u64], percent: u64) -> u64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as u64;
    let rank = (percent * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

const CHUNK: usize = 4096;

fn chunk_sum_exact(chunk: &[u64]) -> u128 {
    chunk.iter().map(|&v| v as u128).sum()
}

fn chunk_sq_dev(chunk: &[u64], mean: f64) -> f64 {
    chunk
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum()
}

fn finish(sorted: Vec<u64>, mean: f64, var: f64) -> LatencyStats {
    LatencyStats {
        count: sorted.len() as u64,
        mean_us: mean,
        median_us: nearest_rank(&sorted, 50),
        p95_us: nearest_rank(&sorted, 95),
        p99_us: nearest_rank(&sorted, 99),
        min_us: sorted[0],
        max_us: sorted[sorted.len() - 1],
        stddev_us: var.sqrt(),
    }
}

/// Sequential aggregation path. The fixed chunk association makes its float
/// results bit-identical to the parallel path's.
pub fn stats_from_latencies_seq(latencies: &[u64]) -> Result<LatencyStats, StatsError> {
    if latencies.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u64;
    let sum: u128 = sorted.chunks(CHUNK).map(chunk_sum_exact).sum();
    let mean = sum as f64 / n as f64;
    let sq: f64 = sorted
        .chunks(CHUNK)
        .map(|c| chunk_sq_dev(c, mean))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    finish_ok(sorted, mean, sq / n as f64)
}

#[cfg(feature = "parallel")]
fn stats_from_latencies_par(latencies: &[u64]) -> Result<LatencyStats, StatsError> {
    if latencies.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = latencies.to_vec();
    sorted.par_sort_unstable();
    let n = sorted.len() as u64;
    let sum: u128 = sorted.par_chunks(CHUNK).map(chunk_sum_exact).sum();
    let mean = sum as f64 / n as f64;
    // Chunk partials collected in chunk order, then combined sequentially.
    let sq: f64 = sorted
        .par_chunks(CHUNK)
        .map(|c| chunk_sq_dev(c, mean))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    finish_ok(sorted, mean, sq / n as f64)
}

fn finish_ok(sorted: Vec<u64>, mean: f64, var: f64) -> Result<LatencyStats, StatsError> {
    Ok(finish(sorted, mean, var))
}

/// Aggregate raw Ok latencies (microseconds).
pub fn stats_from_latencies(latencies: &[u64]) -> Result<LatencyStats, StatsError> {
    #[cfg(feature = "parallel")]
    {
        stats_from_latencies_par(latencies)
    }
    #[cfg(not(feature = "parallel"))]
    {
        stats_from_latencies_seq(latencies)
    }
}

/// Aggregate a trial record list, using only its Ok samples.
pub fn compute_stats(samples: &[LatencySample]) -> Result<LatencyStats, StatsError> {
    let latencies: Vec<u64> = samples.iter().filter_map(|s| s.latency_us).collect();
    stats_from_latencies(&latencies)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_example() {
        let s = stats_from_latencies(&[1_000, 2_000, 3_000]).unwrap();
        assert_eq!(s.mean_us, 2_000.0);
        assert_eq!(s.median_us, 2_000);
        assert_eq!(s.min_us, 1_000);
        assert_eq!(s.max_us, 3_000);
    }

    #[test]
    fn identical_samples_collapse() {
        let s = stats_from_latencies(&[5_000; 100]).unwrap();
        assert_eq!(s.median_us, 5_000);
        assert_eq!(s.p95_us, 5_000);
        assert_eq!(s.p99_us, 5_000);
        assert_eq!(s.stddev_us, 0.0);
        assert_eq!(s.mean_us, 5_000.0);
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(stats_from_latencies(&[]), Err(StatsError::Empty));
        assert_eq!(
            compute_stats(&[LatencySample::failed(0, Outcome::Timeout)]),
            Err(StatsError::Empty)
        );
    }

    #[test]
    fn nearest_rank_on_small_sets() {
        // n=1: every percentile is the single element.
        assert_eq!(nearest_rank(&[7], 50), 7);
        assert_eq!(nearest_rank(&[7], 99), 7);
        // n=4: p50 -> rank 2, p95/p99 -> rank 4.
        let sorted = [10, 20, 30, 40];
        assert_eq!(nearest_rank(&sorted, 50), 20);
        assert_eq!(nearest_rank(&sorted, 95), 40);
        assert_eq!(nearest_rank(&sorted, 99), 40);
    }

    #[test]
    fn order_invariants_hold() {
        let values: Vec<u64> = (0..1_000).map(|i| (i * 7919) % 100_000).collect();
        let s = stats_from_latencies(&values).unwrap();
        assert!(s.min_us <= s.median_us);
        assert!(s.median_us <= s.p95_us);
        assert!(s.p95_us <= s.p99_us);
        assert!(s.p99_us <= s.max_us);
    }

    #[test]
    fn parallel_and_sequential_paths_agree_bit_for_bit() {
        let values: Vec<u64> = (0..100_000u64)
            .map(|i| i.wrapping_mul(6364136223846793005).rotate_left(17) % 10_000_000)
            .collect();
        let a = stats_from_latencies(&values).unwrap();
        let b = stats_from_latencies_seq(&values).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean_us.to_bits(), b.mean_us.to_bits());
        assert_eq!(a.stddev_us.to_bits(), b.stddev_us.to_bits());
    }
}
