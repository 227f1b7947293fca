//! File-system workloads: sequential block I/O, seeded create/delete churn
//! and a multi-actor mixed operation load.
//!
//! Read mode does not drop the page cache (that needs privileges), so read
//! numbers measure cache plus device, the same view an unprivileged tool
//! gets. Every write workload ends with one durability flush whether or not
//! per-block sync was requested.

use std::collections::HashSet;
use std::ffi::CString;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::sync::Barrier;
use std::time::Instant;

use envbench_core::{Polarity, Sample, Unit};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, MicrobenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqMode {
    Read,
    Write,
}

impl SeqMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SeqMode::Read => "read",
            SeqMode::Write => "write",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "read" => Some(SeqMode::Read),
            "write" => Some(SeqMode::Write),
            _ => None,
        }
    }
}

/// Free bytes available to an unprivileged writer under `dir`.
pub fn available_bytes(dir: &Path) -> Result<u64> {
    let c = CString::new(dir.as_os_str().as_bytes())
        .map_err(|_| MicrobenchError::Spec(format!("path {} contains a NUL byte", dir.display())))?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    // SAFETY: `c` is a valid NUL-terminated string and `st` is a valid out-pointer.
    let rc = unsafe { libc::statvfs(c.as_ptr(), &mut st) };
    if rc != 0 {
        return Err(io_err(dir)(std::io::Error::last_os_error()));
    }
    Ok(st.f_bavail as u64 * st.f_frsize as u64)
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(dir))
}

fn fill_block(block: &mut [u8]) {
    for (i, b) in block.iter_mut().enumerate() {
        *b = (i as u8).wrapping_mul(31).wrapping_add(7);
    }
}

fn write_blocks(path: &Path, total: u64, block: &[u8], sync_each: bool) -> Result<()> {
    let mut f = OpenOptions::new().write(true).create(true).truncate(true).open(path).map_err(io_err(path))?;
    for _ in 0..total / block.len() as u64 {
        f.write_all(block).map_err(io_err(path))?;
        if sync_each {
            f.sync_data().map_err(io_err(path))?;
        }
    }
    f.sync_all().map_err(io_err(path))
}

/// Sequential read or write of `total_bytes` in `block_bytes` pieces.
pub fn disk_seq(dir: &Path, mode: SeqMode, sync_each_block: bool, total_bytes: u64, block_bytes: u64) -> Result<Sample> {
    if mode == SeqMode::Read && sync_each_block {
        return Err(MicrobenchError::Spec("sync flag is meaningless for reads".into()));
    }
    if total_bytes == 0 || block_bytes == 0 {
        return Err(MicrobenchError::Spec("total and block sizes must be positive".into()));
    }
    if total_bytes % block_bytes != 0 {
        return Err(MicrobenchError::Spec(format!("block size {block_bytes} does not divide total {total_bytes}")));
    }
    let free = available_bytes(dir)?;
    if free < total_bytes {
        return Err(MicrobenchError::InsufficientSpace { path: dir.to_path_buf(), needed: total_bytes });
    }
    let path = dir.join(format!("envbench-seq-{}.dat", std::process::id()));
    let mut block = vec![0u8; block_bytes as usize];
    fill_block(&mut block);

    let elapsed = match mode {
        SeqMode::Write => {
            let t0 = Instant::now();
            let r = write_blocks(&path, total_bytes, &block, sync_each_block);
            let dt = t0.elapsed().as_secs_f64();
            if let Err(e) = r {
                let _ = fs::remove_file(&path);
                return Err(e);
            }
            dt
        }
        SeqMode::Read => {
            write_blocks(&path, total_bytes, &block, false)?;
            let mut f = File::open(&path).map_err(io_err(&path))?;
            let t0 = Instant::now();
            let mut read = 0u64;
            loop {
                let n = f.read(&mut block).map_err(io_err(&path))?;
                if n == 0 {
                    break;
                }
                read += n as u64;
            }
            let dt = t0.elapsed().as_secs_f64();
            if read != total_bytes {
                let _ = fs::remove_file(&path);
                return Err(MicrobenchError::Spec(format!("read back {read} of {total_bytes} bytes")));
            }
            dt
        }
    };
    fs::remove_file(&path).map_err(io_err(&path))?;
    let sync = if sync_each_block { "sync" } else { "nosync" };
    let value = total_bytes as f64 / (elapsed * 1e6);
    Ok(Sample::new(format!("disk.seq.{}.{sync}", mode.as_str()), value, Unit::MegabytesPerS, Polarity::HigherBetter, elapsed)
        .with_bytes(total_bytes)
        .with_meta("block_bytes", block_bytes)
        .with_meta("mode", mode.as_str())
        .with_meta("sync", sync_each_block))
}

pub const CHURN_MAX_FILE_BYTES: u64 = 4096;

/// The seeded (name, size) sequence used by [`disk_churn`].
pub fn churn_manifest(file_count: usize, seed: u64) -> Result<Vec<(String, u64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(file_count);
    let mut out = Vec::with_capacity(file_count);
    for _ in 0..file_count {
        let name = format!("churn_{:016x}", rng.next_u64());
        let size = rng.random_range(0..=CHURN_MAX_FILE_BYTES);
        if !seen.insert(name.clone()) {
            return Err(MicrobenchError::NameCollision(name));
        }
        out.push((name, size));
    }
    Ok(out)
}

pub fn manifest_digest(manifest: &[(String, u64)]) -> String {
    let mut h = Sha256::new();
    for (name, size) in manifest {
        h.update(format!("{name} {size}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct ChurnRun {
    pub creates: Sample,
    pub deletes: Sample,
    pub manifest: Vec<(String, u64)>,
}

/// Creates `file_count` seeded files, then deletes them in generation order.
pub fn disk_churn(dir: &Path, file_count: usize, seed: u64) -> Result<(Sample, Sample)> {
    disk_churn_run(dir, file_count, seed).map(|r| (r.creates, r.deletes))
}

pub fn disk_churn_run(dir: &Path, file_count: usize, seed: u64) -> Result<ChurnRun> {
    if file_count == 0 {
        return Err(MicrobenchError::ZeroIterations);
    }
    let manifest = churn_manifest(file_count, seed)?;
    let payload = vec![0xA5u8; CHURN_MAX_FILE_BYTES as usize];
    let paths: Vec<PathBuf> = manifest.iter().map(|(n, _)| dir.join(n)).collect();

    let t0 = Instant::now();
    for (path, (_, size)) in paths.iter().zip(&manifest) {
        let mut f = OpenOptions::new().write(true).create_new(true).open(path).map_err(io_err(path))?;
        f.write_all(&payload[..*size as usize]).map_err(io_err(path))?;
    }
    sync_dir(dir)?;
    let create_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    for path in &paths {
        fs::remove_file(path).map_err(io_err(path))?;
    }
    sync_dir(dir)?;
    let delete_s = t1.elapsed().as_secs_f64();

    let digest = manifest_digest(&manifest);
    let mk = |metric: &str, elapsed: f64| {
        Sample::new(metric, file_count as f64 / elapsed, Unit::FilesPerS, Polarity::HigherBetter, elapsed)
            .with_meta("file_count", file_count)
            .with_meta("seed", seed)
            .with_meta("manifest_sha256", digest.clone())
    };
    Ok(ChurnRun { creates: mk("disk.churn.create", create_s), deletes: mk("disk.churn.delete", delete_s), manifest })
}

pub const MIXED_IO_BYTES: u64 = 64 * 1024;

/// Relative weights of the mixed load's operation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixWeights {
    pub write: u32,
    pub read: u32,
    pub create: u32,
    pub delete: u32,
    pub flush: u32,
}

impl Default for MixWeights {
    fn default() -> Self {
        MixWeights { write: 40, read: 30, create: 15, delete: 10, flush: 5 }
    }
}

impl MixWeights {
    fn total(&self) -> u32 {
        self.write + self.read + self.create + self.delete + self.flush
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MixedOp {
    Write { file: u32, bytes: u64 },
    Read { file: u32, bytes: u64 },
    Create { file: u32 },
    Delete { file: u32 },
    Flush { file: u32 },
}

impl MixedOp {
    pub fn bytes(&self) -> u64 {
        match *self {
            MixedOp::Write { bytes, .. } | MixedOp::Read { bytes, .. } => bytes,
            _ => 0,
        }
    }
}

/// The operation sequence of one actor. Pure in (seed, actor, ops, weights);
/// operations that need a live file fall back to a create when none exists.
pub fn actor_plan(seed: u64, actor: u64, ops: usize, weights: MixWeights) -> Vec<MixedOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(actor);
    let total = weights.total().max(1);
    let mut live: Vec<(u32, u64)> = Vec::new();
    let mut next_id = 0u32;
    let mut plan = Vec::with_capacity(ops);
    for _ in 0..ops {
        let roll = rng.random_range(0..total);
        let pick = rng.next_u32() as usize;
        let mut create = |live: &mut Vec<(u32, u64)>| {
            let file = next_id;
            next_id += 1;
            live.push((file, 0));
            MixedOp::Create { file }
        };
        let w = weights;
        let op = if roll < w.write {
            if live.is_empty() {
                create(&mut live)
            } else {
                let slot = pick % live.len();
                live[slot].1 += MIXED_IO_BYTES;
                MixedOp::Write { file: live[slot].0, bytes: MIXED_IO_BYTES }
            }
        } else if roll < w.write + w.read {
            let readable: Vec<usize> = (0..live.len()).filter(|&i| live[i].1 > 0).collect();
            if readable.is_empty() {
                create(&mut live)
            } else {
                let (file, size) = live[readable[pick % readable.len()]];
                MixedOp::Read { file, bytes: size.min(MIXED_IO_BYTES) }
            }
        } else if roll < w.write + w.read + w.create {
            create(&mut live)
        } else if roll < w.write + w.read + w.create + w.delete {
            if live.is_empty() {
                create(&mut live)
            } else {
                let (file, _) = live.remove(pick % live.len());
                MixedOp::Delete { file }
            }
        } else if live.is_empty() {
            create(&mut live)
        } else {
            MixedOp::Flush { file: live[pick % live.len()].0 }
        };
        plan.push(op);
    }
    plan
}

#[derive(Debug, Clone)]
pub struct MixedRun {
    pub sample: Sample,
    /// Executed operations per actor, in execution order.
    pub transcripts: Vec<Vec<MixedOp>>,
}

pub fn disk_mixed(dir: &Path, procs: usize, ops_per_proc: usize, seed: u64) -> Result<Sample> {
    disk_mixed_run(dir, procs, ops_per_proc, seed, MixWeights::default()).map(|r| r.sample)
}

fn run_actor(dir: &Path, plan: &[MixedOp], barrier: &Barrier) -> Result<Vec<MixedOp>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut buf = vec![0u8; MIXED_IO_BYTES as usize];
    fill_block(&mut buf);
    let path = |f: u32| dir.join(format!("f{f}"));
    barrier.wait();
    let mut done = Vec::with_capacity(plan.len());
    for op in plan {
        match *op {
            MixedOp::Create { file } => {
                let p = path(file);
                File::create(&p).map_err(io_err(&p))?;
            }
            MixedOp::Write { file, bytes } => {
                let p = path(file);
                let mut f = OpenOptions::new().append(true).open(&p).map_err(io_err(&p))?;
                f.write_all(&buf[..bytes as usize]).map_err(io_err(&p))?;
            }
            MixedOp::Read { file, bytes } => {
                let p = path(file);
                let mut f = File::open(&p).map_err(io_err(&p))?;
                f.seek(SeekFrom::Start(0)).map_err(io_err(&p))?;
                f.read_exact(&mut buf[..bytes as usize]).map_err(io_err(&p))?;
            }
            MixedOp::Delete { file } => {
                let p = path(file);
                fs::remove_file(&p).map_err(io_err(&p))?;
            }
            MixedOp::Flush { file } => {
                let p = path(file);
                File::open(&p).and_then(|f| f.sync_all()).map_err(io_err(&p))?;
            }
        }
        done.push(*op);
    }
    sync_dir(dir)?;
    Ok(done)
}

/// `procs` concurrent actors each executing their seeded plan.
pub fn disk_mixed_run(dir: &Path, procs: usize, ops_per_proc: usize, seed: u64, weights: MixWeights) -> Result<MixedRun> {
    if procs == 0 {
        return Err(MicrobenchError::ZeroWorkers);
    }
    if ops_per_proc == 0 {
        return Err(MicrobenchError::ZeroIterations);
    }
    if weights.total() == 0 {
        return Err(MicrobenchError::Spec("operation weights sum to zero".into()));
    }
    let plans: Vec<Vec<MixedOp>> = (0..procs).map(|a| actor_plan(seed, a as u64, ops_per_proc, weights)).collect();
    let root = dir.join(format!("envbench-mixed-{}", std::process::id()));
    let barrier = Barrier::new(procs + 1);
    let (results, elapsed) = std::thread::scope(|s| {
        let handles: Vec<_> = plans
            .iter()
            .enumerate()
            .map(|(a, plan)| {
                let actor_dir = root.join(format!("actor_{a}"));
                let barrier = &barrier;
                s.spawn(move || run_actor(&actor_dir, plan, barrier))
            })
            .collect();
        barrier.wait();
        let t0 = Instant::now();
        let results: Vec<Result<Vec<MixedOp>>> =
            handles.into_iter().map(|h| h.join().expect("disk actor panicked")).collect();
        (results, t0.elapsed().as_secs_f64())
    });
    let cleanup = fs::remove_dir_all(&root);
    let transcripts = results.into_iter().collect::<Result<Vec<_>>>()?;
    cleanup.map_err(io_err(&root))?;

    let bytes: u64 = transcripts.iter().flatten().map(MixedOp::bytes).sum();
    let sample = Sample::new("disk.mixed", bytes as f64 / (elapsed * 1e6), Unit::MegabytesPerS, Polarity::HigherBetter, elapsed)
        .with_bytes(bytes)
        .with_meta("procs", procs)
        .with_meta("ops_per_proc", ops_per_proc)
        .with_meta("seed", seed);
    Ok(MixedRun { sample, transcripts })
}
