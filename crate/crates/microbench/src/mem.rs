//! Memory bandwidth kernels over large buffers, in the style of the
//! copy/scale/add/triad and integer/float read/write sets.
//!
//! Each run executes the kernel `inner_reps` times; the reported value is the
//! arithmetic mean over runs of the per-run rate in MB/s (10^6 bytes). Bytes
//! moved count every element read plus every element written.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use envbench_core::{Polarity, Sample, Unit};

use crate::error::{MicrobenchError, Result};

pub const MIN_BUFFER_BYTES: usize = 1 << 20;
const ELEMENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Copy,
    Scale,
    Add,
    Triad,
    IntRead,
    IntWrite,
    FloatRead,
    FloatWrite,
}

impl StreamKind {
    pub const ALL: [StreamKind; 8] = [
        StreamKind::Copy,
        StreamKind::Scale,
        StreamKind::Add,
        StreamKind::Triad,
        StreamKind::IntRead,
        StreamKind::IntWrite,
        StreamKind::FloatRead,
        StreamKind::FloatWrite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Copy => "copy",
            StreamKind::Scale => "scale",
            StreamKind::Add => "add",
            StreamKind::Triad => "triad",
            StreamKind::IntRead => "int_read",
            StreamKind::IntWrite => "int_write",
            StreamKind::FloatRead => "float_read",
            StreamKind::FloatWrite => "float_write",
        }
    }

    /// Buffer passes per kernel execution: (reads, writes).
    fn passes(self) -> (u64, u64) {
        match self {
            StreamKind::Copy | StreamKind::Scale => (1, 1),
            StreamKind::Add | StreamKind::Triad => (2, 1),
            StreamKind::IntRead | StreamKind::FloatRead => (1, 0),
            StreamKind::IntWrite | StreamKind::FloatWrite => (0, 1),
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamKind {
    type Err = MicrobenchError;

    fn from_str(s: &str) -> Result<Self> {
        StreamKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| MicrobenchError::Spec(format!("unknown stream sub-kind '{s}'")))
    }
}

/// Initial buffer contents and the scale factor; exposed so tests can pin
/// analytic checksums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamInputs {
    pub x: f64,
    pub y: f64,
    pub scalar: f64,
}

impl Default for StreamInputs {
    fn default() -> Self {
        StreamInputs { x: 1.0, y: 2.0, scalar: 3.0 }
    }
}

fn alloc<T: Copy>(len: usize, fill: T) -> Result<Vec<T>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| MicrobenchError::AllocationFailure { bytes: len * ELEMENT })?;
    // pre-touch every page so faults land outside the timed region
    v.resize(len, fill);
    Ok(v)
}

struct Buffers {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    ia: Vec<u64>,
    ib: Vec<u64>,
}

impl Buffers {
    fn new(kind: StreamKind, len: usize, inp: StreamInputs) -> Result<Self> {
        let empty = Buffers { a: Vec::new(), b: Vec::new(), c: Vec::new(), ia: Vec::new(), ib: Vec::new() };
        Ok(match kind {
            StreamKind::Copy | StreamKind::Scale => Buffers { a: alloc(len, inp.x)?, c: alloc(len, 0.0)?, ..empty },
            StreamKind::Add | StreamKind::Triad => {
                Buffers { a: alloc(len, inp.x)?, b: alloc(len, inp.y)?, c: alloc(len, 0.0)?, ..empty }
            }
            StreamKind::FloatRead => Buffers { a: alloc(len, inp.x)?, ..empty },
            StreamKind::FloatWrite => Buffers { c: alloc(len, 0.0)?, ..empty },
            StreamKind::IntRead => Buffers { ia: alloc(len, inp.x as u64)?, ..empty },
            StreamKind::IntWrite => Buffers { ib: alloc(len, 0)?, ..empty },
        })
    }

    /// One kernel execution; returns a fold of whatever was read so that
    /// read-only kernels have an observable result.
    fn run(&mut self, kind: StreamKind, inp: StreamInputs, rep: u64) -> u64 {
        let s = inp.scalar;
        match kind {
            StreamKind::Copy => self.c.copy_from_slice(&self.a),
            StreamKind::Scale => {
                for (c, a) in self.c.iter_mut().zip(&self.a) {
                    *c = s * a;
                }
            }
            StreamKind::Add => {
                for ((c, a), b) in self.c.iter_mut().zip(&self.a).zip(&self.b) {
                    *c = a + b;
                }
            }
            StreamKind::Triad => {
                for ((c, a), b) in self.c.iter_mut().zip(&self.a).zip(&self.b) {
                    *c = a + s * b;
                }
            }
            StreamKind::FloatRead => return self.a.iter().sum::<f64>().to_bits(),
            StreamKind::FloatWrite => self.c.fill(s),
            StreamKind::IntRead => return self.ia.iter().fold(0u64, |acc, &v| acc.wrapping_add(v)),
            StreamKind::IntWrite => self.ib.fill(rep.wrapping_add(s as u64)),
        }
        0
    }

    /// Fold-checksum of the destination (or source, for read kernels).
    fn checksum(&self, kind: StreamKind, read_fold: u64) -> u64 {
        match kind {
            StreamKind::IntRead | StreamKind::FloatRead => read_fold,
            StreamKind::IntWrite => self.ib.iter().fold(0u64, |acc, &v| acc.wrapping_add(v)),
            _ => self.c.iter().sum::<f64>().to_bits(),
        }
    }
}

/// Result of a memory run with its per-run details.
#[derive(Debug, Clone)]
pub struct StreamRun {
    pub sample: Sample,
    pub checksums: Vec<u64>,
    pub run_rates: Vec<f64>,
}

pub fn mem_stream(kind: StreamKind, buffer_bytes: usize, inner_reps: u64, outer_runs: u64) -> Result<Sample> {
    mem_stream_with(kind, buffer_bytes, inner_reps, outer_runs, StreamInputs::default()).map(|r| r.sample)
}

pub fn mem_stream_with(
    kind: StreamKind,
    buffer_bytes: usize,
    inner_reps: u64,
    outer_runs: u64,
    inputs: StreamInputs,
) -> Result<StreamRun> {
    if buffer_bytes < MIN_BUFFER_BYTES || buffer_bytes % ELEMENT != 0 {
        return Err(MicrobenchError::BufferTooSmall { bytes: buffer_bytes, element: ELEMENT });
    }
    if inner_reps == 0 || outer_runs == 0 {
        return Err(MicrobenchError::ZeroIterations);
    }
    let len = buffer_bytes / ELEMENT;
    let mut bufs = Buffers::new(kind, len, inputs)?;
    let (reads, writes) = kind.passes();
    let per_run = (reads + writes) * buffer_bytes as u64 * inner_reps;

    let mut checksums = Vec::with_capacity(outer_runs as usize);
    let mut run_rates = Vec::with_capacity(outer_runs as usize);
    let mut elapsed_total = 0.0;
    for _ in 0..outer_runs {
        let mut fold = 0u64;
        let t0 = Instant::now();
        for rep in 0..inner_reps {
            fold = black_box(bufs.run(kind, inputs, rep));
        }
        let dt = t0.elapsed().as_secs_f64();
        black_box(&bufs.c);
        elapsed_total += dt;
        run_rates.push(per_run as f64 / (dt * 1e6));
        checksums.push(bufs.checksum(kind, fold));
    }
    if let Some(bad) = checksums.iter().find(|&&c| c != checksums[0]) {
        return Err(MicrobenchError::KernelCorrupted { expected: checksums[0].to_string(), actual: bad.to_string() });
    }
    let value = run_rates.iter().sum::<f64>() / run_rates.len() as f64;
    let sample = Sample::new(format!("mem.{kind}"), value, Unit::MegabytesPerS, Polarity::HigherBetter, elapsed_total)
        .with_bytes(per_run * outer_runs)
        .with_meta("buffer_bytes", buffer_bytes)
        .with_meta("reps", inner_reps)
        .with_meta("runs", outer_runs)
        .with_meta("checksum", checksums[0])
        .with_meta("run_mb_per_s", run_rates.clone());
    Ok(StreamRun { sample, checksums, run_rates })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_unaligned_buffers() {
        assert!(matches!(mem_stream(StreamKind::Copy, 1024, 1, 1), Err(MicrobenchError::BufferTooSmall { .. })));
        assert!(matches!(
            mem_stream(StreamKind::Copy, MIN_BUFFER_BYTES + 3, 1, 1),
            Err(MicrobenchError::BufferTooSmall { .. })
        ));
        assert!(matches!(mem_stream(StreamKind::Copy, MIN_BUFFER_BYTES, 0, 1), Err(MicrobenchError::ZeroIterations)));
    }

    #[test]
    fn scale_of_ones_checksums_to_threes() {
        let r = mem_stream_with(StreamKind::Scale, MIN_BUFFER_BYTES, 1, 1, StreamInputs { x: 1.0, y: 0.0, scalar: 3.0 })
            .unwrap();
        let n = (MIN_BUFFER_BYTES / 8) as f64;
        assert_eq!(f64::from_bits(r.checksums[0]), 3.0 * n);
    }

    #[test]
    fn every_kind_runs_and_counts_bytes() {
        for kind in StreamKind::ALL {
            let r = mem_stream_with(kind, MIN_BUFFER_BYTES, 2, 2, StreamInputs::default()).unwrap();
            let (rd, wr) = kind.passes();
            assert_eq!(r.sample.bytes_processed, Some((rd + wr) * MIN_BUFFER_BYTES as u64 * 4));
            assert_eq!(r.sample.metric, format!("mem.{kind}"));
            assert!(r.sample.value > 0.0);
            assert_eq!(kind.as_str().parse::<StreamKind>().unwrap(), kind);
        }
    }

    #[test]
    fn triad_analytic_value() {
        let r = mem_stream_with(StreamKind::Triad, MIN_BUFFER_BYTES, 1, 2, StreamInputs::default()).unwrap();
        let n = (MIN_BUFFER_BYTES / 8) as f64;
        assert_eq!(f64::from_bits(r.checksums[1]), 7.0 * n);
    }
}
