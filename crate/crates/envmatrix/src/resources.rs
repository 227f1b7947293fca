//! Process-tree CPU and RSS sampling from `/proc`.
//!
//! CPU% comes from cumulative user+system time deltas between ticks, summed
//! over the root and every descendant alive at the tick (100 = one core).
//! The descendant set is re-resolved on every tick, so processes that vanish
//! mid-walk are simply skipped.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use envbench_core::stats::summarize;
use serde::{Deserialize, Serialize};

pub const MIN_INTERVAL_MS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourcePoint {
    pub t_s: f64,
    pub cpu_percent: f64,
    pub rss_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceTrace {
    pub interval_ms: u64,
    pub points: Vec<ResourcePoint>,
}

/// Mean, population std and max of the CPU and RSS columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSummary {
    pub cpu_mean: f64,
    pub cpu_std: f64,
    pub cpu_max: f64,
    pub rss_mean: f64,
    pub rss_std: f64,
    pub rss_max: f64,
}

impl ResourceTrace {
    pub fn summary(&self) -> Option<ResourceSummary> {
        let cpu: Vec<f64> = self.points.iter().map(|p| p.cpu_percent).collect();
        let rss: Vec<f64> = self.points.iter().map(|p| p.rss_bytes as f64).collect();
        let c = summarize(&cpu).ok()?;
        let r = summarize(&rss).ok()?;
        Some(ResourceSummary {
            cpu_mean: c.mean,
            cpu_std: c.std,
            cpu_max: c.max,
            rss_mean: r.mean,
            rss_std: r.std,
            rss_max: r.max,
        })
    }

    pub fn max_rss(&self) -> u64 {
        self.points.iter().map(|p| p.rss_bytes).max().unwrap_or(0)
    }
}

pub fn logical_cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn clock_ticks() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as f64
    } else {
        100.0
    }
}

fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as u64
    } else {
        4096
    }
}

/// (ppid, utime + stime in ticks) parsed from `/proc/<pid>/stat`.
fn read_stat(pid: u32) -> Option<(u32, u64)> {
    let raw = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // the command name may contain spaces and parentheses; fields resume after the last ')'
    let rest = &raw[raw.rfind(')')? + 2..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let ppid = fields.get(1)?.parse().ok()?;
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some((ppid, utime + stime))
}

fn read_rss(pid: u32, page: u64) -> Option<u64> {
    let raw = fs::read_to_string(format!("/proc/{pid}/statm")).ok()?;
    raw.split_whitespace().nth(1)?.parse::<u64>().ok().map(|pages| pages * page)
}

/// The root plus all its descendants, by a parent-pointer scan of `/proc`.
pub fn process_tree(root: u32) -> Vec<u32> {
    let mut children: HashMap<u32, Vec<u32>> = HashMap::new();
    if let Ok(entries) = fs::read_dir("/proc") {
        for e in entries.flatten() {
            let Some(pid) = e.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else { continue };
            if let Some((ppid, _)) = read_stat(pid) {
                children.entry(ppid).or_default().push(pid);
            }
        }
    }
    let mut out = vec![root];
    let mut i = 0;
    while i < out.len() {
        if let Some(kids) = children.get(&out[i]) {
            out.extend(kids);
        }
        i += 1;
    }
    out
}

struct Tick {
    cpu_ticks: BTreeMap<u32, u64>,
    at: Instant,
}

fn take_tick(root: u32, prev: &Tick, page: u64) -> (Tick, Option<(u64, u64)>) {
    let now = Instant::now();
    let mut cpu_ticks = BTreeMap::new();
    let mut delta = 0u64;
    let mut rss = 0u64;
    let mut alive = false;
    for pid in process_tree(root) {
        let Some((_, ticks)) = read_stat(pid) else { continue };
        alive = true;
        delta += ticks.saturating_sub(prev.cpu_ticks.get(&pid).copied().unwrap_or(0));
        rss += read_rss(pid, page).unwrap_or(0);
        cpu_ticks.insert(pid, ticks);
    }
    (Tick { cpu_ticks, at: now }, alive.then_some((delta, rss)))
}

/// Samples `root`'s tree every `interval_ms` until `stop` is set or the tree
/// is gone.
pub fn sample_tree(root: u32, interval_ms: u64, spawned: Instant, stop: &AtomicBool) -> ResourceTrace {
    let interval_ms = interval_ms.max(MIN_INTERVAL_MS);
    let interval = Duration::from_millis(interval_ms);
    let hz = clock_ticks();
    let page = page_size();
    let cap = 100.0 * logical_cores() as f64;
    let mut prev = Tick { cpu_ticks: BTreeMap::new(), at: spawned };
    let mut points: Vec<ResourcePoint> = Vec::new();
    let mut next = spawned + interval;
    loop {
        let now = Instant::now();
        if next > now {
            // sleep in small slices so a stop request is honoured promptly
            let mut left = next - now;
            while left > Duration::ZERO && !stop.load(Ordering::Relaxed) {
                let step = left.min(Duration::from_millis(10));
                std::thread::sleep(step);
                left = left.saturating_sub(step);
            }
        }
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let (tick, reading) = take_tick(root, &prev, page);
        let Some((delta, rss)) = reading else { break };
        let dt = tick.at.duration_since(prev.at).as_secs_f64();
        let t_s = tick.at.duration_since(spawned).as_secs_f64();
        if dt > 0.0 && points.last().map_or(true, |p| t_s > p.t_s) {
            let cpu = (delta as f64 / hz / dt * 100.0).min(cap);
            points.push(ResourcePoint { t_s, cpu_percent: cpu, rss_bytes: rss });
        }
        prev = tick;
        next += interval;
        while next <= Instant::now() {
            next += interval;
        }
    }
    ResourceTrace { interval_ms, points }
}

/// A sampler on its own thread; [`Sampler::finish`] stops it and returns the
/// trace.
pub struct Sampler {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<ResourceTrace>,
}

impl Sampler {
    pub fn start(root: u32, interval_ms: u64, spawned: Instant) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || sample_tree(root, interval_ms, spawned, &flag));
        Sampler { stop, handle }
    }

    pub fn finish(self) -> ResourceTrace {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap_or_default()
    }
}

/// Samples an already running process until its tree exits.
pub fn sample_resources(root: u32, interval_ms: u64) -> ResourceTrace {
    sample_tree(root, interval_ms, Instant::now(), &AtomicBool::new(false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_process_is_readable() {
        let me = std::process::id();
        let (_, ticks) = read_stat(me).unwrap();
        assert!(ticks < u64::MAX);
        assert!(read_rss(me, page_size()).unwrap() > 0);
        assert_eq!(process_tree(me)[0], me);
    }

    #[test]
    fn vanished_process_ends_sampling() {
        let trace = sample_resources(u32::MAX - 1, 50);
        assert!(trace.points.is_empty());
        assert!(trace.summary().is_none());
    }
}
