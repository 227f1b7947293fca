//! Launch timeline recorder.
//!
//! Services are spawned as child processes and declared loaded by an
//! external readiness probe: an output line, an open port, or process exit.
//! The recording granularity is the launch entry; several components sharing
//! one process cannot be told apart from the outside.
//!
//! Output is read line by line with an 8 KiB cap. Longer lines are split into
//! chunks and the pattern is matched per chunk, so a match straddling a chunk
//! boundary is missed.

mod records;

pub use records::{read_records_csv, read_trace, trace_to_records, write_records_csv, write_trace, LaunchRecord};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::net::{TcpStream, ToSocketAddrs};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::debug;
use serde::{Deserialize, Serialize};

pub const LINE_CAP: usize = 8 * 1024;
/// How long to keep listening for a probe signal after the process exited.
const EXIT_GRACE: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadinessProbe {
    LineMatch { pattern: String, timeout_s: f64 },
    PortOpen { address: String, timeout_s: f64 },
    ProcessExit { timeout_s: f64 },
}

impl ReadinessProbe {
    pub fn timeout_s(&self) -> f64 {
        match self {
            ReadinessProbe::LineMatch { timeout_s, .. }
            | ReadinessProbe::PortOpen { timeout_s, .. }
            | ReadinessProbe::ProcessExit { timeout_s } => *timeout_s,
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let t = self.timeout_s();
        if !(t.is_finite() && t > 0.0) {
            out.push(format!("timeout_s must be positive, got {t}"));
        }
        match self {
            ReadinessProbe::LineMatch { pattern, .. } if pattern.is_empty() => out.push("empty line_match pattern".into()),
            ReadinessProbe::PortOpen { address, .. } if address.to_socket_addrs().map_or(true, |mut a| a.next().is_none()) => {
                out.push(format!("unresolvable port_open address '{address}'"))
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchEntry {
    pub id: String,
    pub argv: Vec<String>,
    #[serde(default)]
    pub module: String,
    pub probe: ReadinessProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchPlan {
    pub entries: Vec<LaunchEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchMode {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ready,
    Timeout,
    ExitedEarly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub service: String,
    #[serde(default)]
    pub module: String,
    pub pid: u32,
    pub spawn_t_s: f64,
    pub ready_t_s: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("invalid launch plan: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot spawn service '{service}': {source}")]
    SpawnFailure {
        service: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn validate_entries(entries: &[LaunchEntry]) -> Vec<String> {
    let mut errors = Vec::new();
    if entries.is_empty() {
        errors.push("no entries".into());
    }
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.id.as_str()) {
            errors.push(format!("duplicate service id '{}'", e.id));
        }
        if e.argv.first().map_or(true, |p| p.is_empty()) {
            errors.push(format!("service '{}' has an empty argv", e.id));
        }
        errors.extend(e.probe.problems().into_iter().map(|p| format!("service '{}': {p}", e.id)));
    }
    errors
}

enum Signal {
    Line(usize, Instant),
    Port(usize, Instant),
    Exit(usize, Instant),
}

fn watch_lines(idx: usize, src: impl Read + Send + 'static, pattern: Option<String>, tx: Sender<Signal>) {
    std::thread::spawn(move || {
        let mut reader = BufReader::with_capacity(LINE_CAP, src);
        let mut chunk = Vec::with_capacity(LINE_CAP);
        let mut matched = false;
        loop {
            chunk.clear();
            let n = match (&mut reader).take(LINE_CAP as u64).read_until(b'\n', &mut chunk) {
                Ok(n) => n,
                Err(_) => break,
            };
            if n == 0 {
                break;
            }
            if matched {
                continue;
            }
            if let Some(p) = &pattern {
                if String::from_utf8_lossy(&chunk).contains(p.as_str()) {
                    matched = true;
                    let _ = tx.send(Signal::Line(idx, Instant::now()));
                }
            }
        }
    });
}

fn exited_blocking(pid: u32) {
    let mut info: libc::siginfo_t = unsafe { std::mem::zeroed() };
    loop {
        // SAFETY: valid out-pointer; WNOWAIT keeps the child for the reaper.
        let rc = unsafe { libc::waitid(libc::P_PID, pid, &mut info, libc::WEXITED | libc::WNOWAIT) };
        if rc == 0 || std::io::Error::last_os_error().raw_os_error() != Some(libc::EINTR) {
            return;
        }
    }
}

fn watch_port(idx: usize, address: String, stop: Arc<AtomicBool>, tx: Sender<Signal>) {
    std::thread::spawn(move || {
        let Some(addr) = address.to_socket_addrs().ok().and_then(|mut a| a.next()) else { return };
        while !stop.load(Ordering::Relaxed) {
            if TcpStream::connect_timeout(&addr, Duration::from_millis(50)).is_ok() {
                let _ = tx.send(Signal::Port(idx, Instant::now()));
                return;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    });
}

struct Running {
    child: Child,
    waiter: JoinHandle<()>,
    spawned: Instant,
    deadline: Instant,
    exited: Option<Instant>,
    resolved: Option<(Outcome, Option<Instant>)>,
}

struct Session {
    epoch: Option<Instant>,
    running: Vec<Running>,
    tx: Sender<Signal>,
    rx: Receiver<Signal>,
    stop: Arc<AtomicBool>,
}

impl Session {
    fn spawn(&mut self, idx: usize, entry: &LaunchEntry) -> Result<(), LaunchError> {
        let mut cmd = Command::new(&entry.argv[0]);
        cmd.args(&entry.argv[1..]).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).process_group(0);
        let spawned = Instant::now();
        let mut child = cmd.spawn().map_err(|source| LaunchError::SpawnFailure { service: entry.id.clone(), source })?;
        self.epoch.get_or_insert(spawned);
        let pattern = match &entry.probe {
            ReadinessProbe::LineMatch { pattern, .. } => Some(pattern.clone()),
            _ => None,
        };
        watch_lines(idx, child.stdout.take().expect("piped stdout"), pattern.clone(), self.tx.clone());
        watch_lines(idx, child.stderr.take().expect("piped stderr"), pattern, self.tx.clone());
        if let ReadinessProbe::PortOpen { address, .. } = &entry.probe {
            watch_port(idx, address.clone(), self.stop.clone(), self.tx.clone());
        }
        let pid = child.id();
        let tx = self.tx.clone();
        let waiter = std::thread::spawn(move || {
            exited_blocking(pid);
            let _ = tx.send(Signal::Exit(idx, Instant::now()));
        });
        let deadline = spawned + Duration::from_secs_f64(entry.probe.timeout_s());
        self.running.push(Running { child, waiter, spawned, deadline, exited: None, resolved: None });
        Ok(())
    }

    /// Processes signals until every service up to `upto` is resolved.
    fn resolve(&mut self, entries: &[LaunchEntry], upto: usize) {
        loop {
            let now = Instant::now();
            let mut next_wake: Option<Instant> = None;
            let mut pending = false;
            for (i, r) in self.running.iter_mut().enumerate().take(upto) {
                if r.resolved.is_some() {
                    continue;
                }
                if let Some(exit) = r.exited {
                    if now >= exit + EXIT_GRACE {
                        r.resolved = Some((Outcome::ExitedEarly, None));
                        continue;
                    }
                    next_wake = Some(next_wake.map_or(exit + EXIT_GRACE, |w| w.min(exit + EXIT_GRACE)));
                }
                if now >= r.deadline {
                    debug!("service '{}' timed out", entries[i].id);
                    r.resolved = Some((Outcome::Timeout, None));
                    continue;
                }
                pending = true;
                next_wake = Some(next_wake.map_or(r.deadline, |w| w.min(r.deadline)));
            }
            if !pending && self.running.iter().take(upto).all(|r| r.resolved.is_some()) {
                return;
            }
            let wait = next_wake.map_or(Duration::from_millis(10), |w| w.saturating_duration_since(now));
            match self.rx.recv_timeout(wait) {
                Ok(sig) => self.apply(entries, sig),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }

    fn apply(&mut self, entries: &[LaunchEntry], sig: Signal) {
        let (idx, at, exit) = match sig {
            Signal::Line(i, t) | Signal::Port(i, t) => (i, t, false),
            Signal::Exit(i, t) => (i, t, true),
        };
        let r = &mut self.running[idx];
        if r.resolved.is_some() {
            return;
        }
        let is_exit_probe = matches!(entries[idx].probe, ReadinessProbe::ProcessExit { .. });
        if exit && !is_exit_probe {
            r.exited = Some(at);
        } else if at <= r.deadline {
            r.resolved = Some((Outcome::Ready, Some(at)));
        } else {
            r.resolved = Some((Outcome::Timeout, None));
        }
    }

    fn teardown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for r in &self.running {
            // SAFETY: the child is not yet reaped, so its pid still names its group.
            unsafe {
                libc::kill(-(r.child.id() as libc::pid_t), libc::SIGKILL);
            }
        }
        for r in self.running.drain(..) {
            let Running { mut child, waiter, .. } = r;
            let _ = waiter.join();
            let _ = child.wait();
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.teardown();
    }
}

/// Spawns every entry and records when each one became ready. All spawned
/// process groups are killed and reaped before this returns.
pub fn record_launch(entries: &[LaunchEntry], mode: LaunchMode) -> Result<Vec<TraceEvent>, LaunchError> {
    let errors = validate_entries(entries);
    if !errors.is_empty() {
        return Err(LaunchError::Invalid(errors));
    }
    let (tx, rx) = mpsc::channel();
    let mut session = Session { epoch: None, running: Vec::new(), tx, rx, stop: Arc::new(AtomicBool::new(false)) };
    for (i, entry) in entries.iter().enumerate() {
        session.spawn(i, entry)?;
        if mode == LaunchMode::Sequential {
            session.resolve(entries, i + 1);
        }
    }
    session.resolve(entries, entries.len());

    let epoch = session.epoch.expect("at least one spawn");
    let rel = |t: Instant| t.duration_since(epoch).as_secs_f64();
    let events = entries
        .iter()
        .zip(&session.running)
        .map(|(e, r)| {
            let (outcome, ready) = r.resolved.unwrap_or((Outcome::Timeout, None));
            TraceEvent {
                service: e.id.clone(),
                module: e.module.clone(),
                pid: r.child.id(),
                spawn_t_s: rel(r.spawned),
                ready_t_s: ready.map(rel),
                outcome,
            }
        })
        .collect();
    session.teardown();
    Ok(events)
}

/// Per-module first spawn and last readiness over the ready events.
pub fn module_windows(trace: &[TraceEvent]) -> BTreeMap<String, (f64, f64)> {
    let mut out: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for e in trace {
        let Some(ready) = e.ready_t_s else { continue };
        let w = out.entry(e.module.clone()).or_insert((e.spawn_t_s, ready));
        w.0 = w.0.min(e.spawn_t_s);
        w.1 = w.1.max(ready);
    }
    out
}
