//! Self-contained synthetic workloads. Each one returns a [`Sample`] whose
//! wire line is what the matrix runner reads back across environment
//! boundaries, so the same binary works as the payload inside any container
//! or VM.
//!
//! Absolute scores are not comparable with the classic benchmark tools these
//! kernels stand in for; they are meant to be compared against the same
//! kernel on a baseline environment.

pub mod cpu;
pub mod disk;
mod error;
pub mod mem;
pub mod net;
pub mod workload;

pub use envbench_core::{Polarity, Sample, Unit};
pub use error::{MicrobenchError, Result};
pub use workload::{WorkloadKind, WorkloadSpec};

use std::time::{SystemTime, UNIX_EPOCH};

/// Adds the provenance keys every emitted sample carries: tool version, host
/// and emission time.
pub fn stamp(sample: &mut Sample) {
    sample.set_meta("version", env!("CARGO_PKG_VERSION"));
    sample.set_meta("host", hostname());
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    sample.set_meta("timestamp", now);
}

pub fn hostname() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .map(|s| s.trim().to_owned())
        .ok()
        .filter(|s| !s.is_empty())
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "unknown".into())
}
