//! Time units used throughout the crate.
//!
//! All internal timestamps and durations are unsigned nanoseconds on a
//! monotonic axis (simulated clock in simulated mode, `Instant`-based in
//! loopback mode). External formats carry integer microseconds.

/// Monotonic nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_MICRO: u64 = 1_000;
pub const NANOS_PER_MILLI: u64 = 1_000_000;

pub const fn micros(us: u64) -> Nanos {
    us * NANOS_PER_MICRO
}

pub const fn millis(ms: u64) -> Nanos {
    ms * NANOS_PER_MILLI
}

/// Round a nanosecond span to integer microseconds (half up).
pub const fn to_micros_round(ns: Nanos) -> u64 {
    (ns + NANOS_PER_MICRO / 2) / NANOS_PER_MICRO
}

/// Estimate the resolution of the wall monotonic clock, in nanoseconds.
///
/// Returns the smallest nonzero `Instant` delta observed over a short probe.
pub fn wall_clock_resolution_ns() -> u64 {
    let mut best = u64::MAX;
    for _ in 0..64 {
        let a = std::time::Instant::now();
        let mut b = std::time::Instant::now();
        while b == a {
            b = std::time::Instant::now();
        }
        let d = (b - a).as_nanos() as u64;
        if d > 0 && d < best {
            best = d;
        }
    }
    if best == u64::MAX {
        1
    } else {
        best
    }
}
