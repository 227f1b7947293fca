//! CPU kernels: an integer/string/branch kernel, a floating-point block
//! kernel and a parallel build-like task pool.
//!
//! Both rate kernels restart their state every [`PERIOD`] global iterations,
//! so the checksum for any iteration count has a closed form
//! `q·S(PERIOD) + S(r)` computed from a single period. The checksum guards
//! against the optimizer deleting the kernel.

use std::hash::{DefaultHasher, Hasher};
use std::hint::black_box;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use envbench_core::{Polarity, Sample, Unit};

use crate::error::{MicrobenchError, Result};

pub const PERIOD: u64 = 256;

/// The floating-point kernel's iteration count in the reference setup.
pub const FLOAT_REFERENCE_ITERATIONS: u64 = 50_000_000;

/// Default job count of the parallel build workload.
pub const DEFAULT_JOBS: usize = 4;

const fn branch_table() -> [u8; 256] {
    let mut t = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        t[i] = ((i * 37 + 11) % 251) as u8;
        i += 1;
    }
    t
}

static BRANCH_TABLE: [u8; 256] = branch_table();

const SEED_TEXT: [u8; 16] = *b"envbench-dhry-01";

struct IntKernel {
    a: u32,
    b: u32,
    text: [u8; 16],
}

impl IntKernel {
    fn new() -> Self {
        IntKernel { a: 1, b: 1, text: SEED_TEXT }
    }

    fn reset(&mut self) {
        *self = IntKernel::new();
    }

    #[inline]
    fn step(&mut self, phase: u32) -> u32 {
        let next = self.a.wrapping_add(self.b);
        self.a = self.b;
        self.b = next;
        let len = 2 + (phase % 15) as usize;
        self.text[..len].reverse();
        let slot = BRANCH_TABLE[((next ^ phase) & 0xff) as usize];
        match slot % 4 {
            0 => next.rotate_left(5) ^ u32::from(self.text[len - 1]),
            1 => next ^ (u32::from(self.text[0]) << 8),
            2 => next.wrapping_mul(0x9E37_79B9),
            _ => next.wrapping_sub(u32::from(slot)),
        }
    }
}

fn int_range(start: u64, end: u64) -> u32 {
    let mut k = IntKernel::new();
    let mut phase = start % PERIOD;
    // fast-forward to the in-period state at `start`
    for p in 0..phase {
        k.step(p as u32);
    }
    let mut sum = 0u32;
    for _ in start..end {
        sum = sum.wrapping_add(k.step(phase as u32));
        phase += 1;
        if phase == PERIOD {
            phase = 0;
            k.reset();
            black_box(&mut k);
        }
    }
    sum
}

/// Closed-form integer checksum for `iterations` iterations.
pub fn expected_int_checksum(iterations: u64) -> u32 {
    let mut k = IntKernel::new();
    let rem = iterations % PERIOD;
    let (mut full, mut partial) = (0u32, 0u32);
    for p in 0..PERIOD {
        let v = k.step(p as u32);
        full = full.wrapping_add(v);
        if p < rem {
            partial = partial.wrapping_add(v);
        }
    }
    full.wrapping_mul((iterations / PERIOD) as u32).wrapping_add(partial)
}

#[inline]
fn float_step(phase: u64) -> f64 {
    let x = 0.5 + phase as f64 / PERIOD as f64;
    // polynomial
    let p = (((0.3 * x - 0.2) * x + 0.7) * x - 0.1) * x + 1.0;
    // trigonometric
    let s = (1.3 * x).sin() * (0.7 * x).cos();
    // arctangent
    let t = (s + p).atan();
    // square root chain
    let q = (p.abs() + 1.0).sqrt().sqrt();
    // exponential
    let e = (-0.5 * x).exp();
    // logarithm
    let l = (x + 1.0).ln();
    // mixed transcendental
    let m = (t * e + l).sin().abs().sqrt();
    // exp/log round trip
    let z = (q * m + e).exp().ln();
    p + s + t + q + e + l + m + z
}

fn float_range(start: u64, end: u64) -> f64 {
    let mut phase = start % PERIOD;
    let mut sum = 0.0;
    for _ in start..end {
        sum += float_step(black_box(phase));
        phase += 1;
        if phase == PERIOD {
            phase = 0;
        }
    }
    sum
}

pub fn expected_float_checksum(iterations: u64) -> f64 {
    let rem = iterations % PERIOD;
    let (mut full, mut partial) = (0.0, 0.0);
    for p in 0..PERIOD {
        let v = float_step(p);
        full += v;
        if p < rem {
            partial += v;
        }
    }
    full * (iterations / PERIOD) as f64 + partial
}

/// Splits `0..total` into `workers` contiguous ranges; the remainder goes to
/// the last one.
fn split(total: u64, workers: usize) -> Vec<(u64, u64)> {
    let per = total / workers as u64;
    (0..workers as u64)
        .map(|w| {
            let start = w * per;
            let end = if w + 1 == workers as u64 { total } else { start + per };
            (start, end)
        })
        .collect()
}

/// Runs `kernel` over the split ranges on `workers` threads and times only
/// the region between the start barrier and the last join.
fn timed_parallel<R: Send>(iterations: u64, workers: usize, kernel: fn(u64, u64) -> R) -> (Vec<R>, f64) {
    let ranges = split(iterations, workers);
    let barrier = Barrier::new(workers + 1);
    std::thread::scope(|s| {
        let handles: Vec<_> = ranges
            .iter()
            .map(|&(a, b)| {
                let barrier = &barrier;
                s.spawn(move || {
                    barrier.wait();
                    kernel(a, b)
                })
            })
            .collect();
        barrier.wait();
        let t0 = Instant::now();
        let parts: Vec<R> = handles.into_iter().map(|h| h.join().expect("kernel worker panicked")).collect();
        (parts, t0.elapsed().as_secs_f64())
    })
}

fn check_args(iterations: u64, workers: usize) -> Result<()> {
    if iterations == 0 {
        return Err(MicrobenchError::ZeroIterations);
    }
    if workers == 0 {
        return Err(MicrobenchError::ZeroWorkers);
    }
    Ok(())
}

fn verify_int(expected: u32, actual: u32) -> Result<()> {
    if expected != actual {
        return Err(MicrobenchError::KernelCorrupted { expected: expected.to_string(), actual: actual.to_string() });
    }
    Ok(())
}

fn verify_float(expected: f64, actual: f64) -> Result<()> {
    if (expected - actual).abs() > 1e-6 * expected.abs() || !actual.is_finite() {
        return Err(MicrobenchError::KernelCorrupted { expected: expected.to_string(), actual: actual.to_string() });
    }
    Ok(())
}

/// Integer kernel rate in iterations per second.
pub fn cpu_int_rate(iterations: u64, workers: usize) -> Result<Sample> {
    check_args(iterations, workers)?;
    let (parts, elapsed) = timed_parallel(iterations, workers, int_range);
    let checksum = parts.into_iter().fold(0u32, u32::wrapping_add);
    verify_int(expected_int_checksum(iterations), checksum)?;
    Ok(Sample::new("cpu.int", iterations as f64 / elapsed, Unit::OpsPerS, Polarity::HigherBetter, elapsed)
        .with_meta("iterations", iterations)
        .with_meta("workers", workers)
        .with_meta("checksum", checksum))
}

/// Floating-point kernel rate in iterations per second.
pub fn cpu_float_rate(iterations: u64, workers: usize) -> Result<Sample> {
    check_args(iterations, workers)?;
    let (parts, elapsed) = timed_parallel(iterations, workers, float_range);
    let checksum: f64 = parts.into_iter().sum();
    verify_float(expected_float_checksum(iterations), checksum)?;
    Ok(Sample::new("cpu.float", iterations as f64 / elapsed, Unit::OpsPerS, Polarity::HigherBetter, elapsed)
        .with_meta("iterations", iterations)
        .with_meta("workers", workers)
        .with_meta("checksum", checksum))
}

/// Words touched per build task.
pub const DEFAULT_TASK_WORDS: usize = 1 << 16;

/// One compile-like task: allocate, fill from a seed, hash and branch.
fn build_task(index: usize, words: usize) -> u64 {
    let mut state = (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    let mut buf: Vec<u64> = Vec::with_capacity(words);
    for _ in 0..words {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        buf.push(z ^ (z >> 31));
    }
    let mut hasher = DefaultHasher::new();
    let mut acc = 0u64;
    for (i, &w) in buf.iter().enumerate() {
        acc = match w % 7 {
            0 => acc.wrapping_add(w),
            1 => acc ^ w.rotate_left(i as u32 % 64),
            2 => acc.wrapping_mul(w | 1),
            3 => acc.wrapping_sub(w >> 3),
            4 => {
                hasher.write_u64(w ^ acc);
                acc
            }
            5 => acc ^ (w << 1),
            _ => acc.rotate_right(7).wrapping_add(1),
        };
    }
    hasher.write_u64(acc);
    black_box(buf);
    hasher.finish()
}

/// Wall time to push `task_units` tasks through a pool of `jobs` workers.
pub fn cpu_parallel_build(jobs: usize, task_units: usize) -> Result<Sample> {
    cpu_parallel_build_sized(jobs, task_units, DEFAULT_TASK_WORDS)
}

pub fn cpu_parallel_build_sized(jobs: usize, task_units: usize, task_words: usize) -> Result<Sample> {
    if jobs == 0 {
        return Err(MicrobenchError::ZeroWorkers);
    }
    if task_units < jobs {
        return Err(MicrobenchError::JobsExceedTasks { jobs, tasks: task_units });
    }
    if task_words == 0 {
        return Err(MicrobenchError::ZeroIterations);
    }
    let next = AtomicUsize::new(0);
    let barrier = Barrier::new(jobs + 1);
    let (checksum, elapsed) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                let (next, barrier) = (&next, &barrier);
                s.spawn(move || {
                    barrier.wait();
                    let mut acc = 0u64;
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= task_units {
                            break acc;
                        }
                        acc = acc.wrapping_add(build_task(i, task_words));
                    }
                })
            })
            .collect();
        barrier.wait();
        let t0 = Instant::now();
        let sum = handles
            .into_iter()
            .map(|h| h.join().expect("build worker panicked"))
            .fold(0u64, u64::wrapping_add);
        (sum, t0.elapsed().as_secs_f64())
    });
    Ok(Sample::new("cpu.parallel", elapsed, Unit::Seconds, Polarity::LowerBetter, elapsed)
        .with_meta("jobs", jobs)
        .with_meta("task_units", task_units)
        .with_meta("task_words", task_words)
        .with_meta("checksum", checksum))
}
