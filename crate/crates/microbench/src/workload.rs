//! Workload descriptions shared by the `mb` payload command and the matrix
//! runner, with the reference configuration as defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cpu::{self, FLOAT_REFERENCE_ITERATIONS};
use crate::disk::{self, SeqMode};
use crate::error::{MicrobenchError, Result};
use crate::mem::{self, StreamKind};
use crate::net::{self, Direction};
use crate::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    CpuInt,
    CpuFloat,
    CpuParallel,
    MemStream,
    DiskSeq,
    DiskChurn,
    DiskMixed,
    NetThroughput,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 8] = [
        WorkloadKind::CpuInt,
        WorkloadKind::CpuFloat,
        WorkloadKind::CpuParallel,
        WorkloadKind::MemStream,
        WorkloadKind::DiskSeq,
        WorkloadKind::DiskChurn,
        WorkloadKind::DiskMixed,
        WorkloadKind::NetThroughput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::CpuInt => "cpu-int",
            WorkloadKind::CpuFloat => "cpu-float",
            WorkloadKind::CpuParallel => "cpu-parallel",
            WorkloadKind::MemStream => "mem-stream",
            WorkloadKind::DiskSeq => "disk-seq",
            WorkloadKind::DiskChurn => "disk-churn",
            WorkloadKind::DiskMixed => "disk-mixed",
            WorkloadKind::NetThroughput => "net-throughput",
        }
    }

    /// Parameter names accepted by this kind.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            WorkloadKind::CpuInt | WorkloadKind::CpuFloat => &["iterations", "workers"],
            WorkloadKind::CpuParallel => &["jobs", "task_units"],
            WorkloadKind::MemStream => &["stream", "buffer_bytes", "inner_reps", "outer_runs"],
            WorkloadKind::DiskSeq => &["dir", "mode", "sync", "total_bytes", "block_bytes"],
            WorkloadKind::DiskChurn => &["dir", "file_count", "seed"],
            WorkloadKind::DiskMixed => &["dir", "procs", "ops_per_proc", "seed"],
            WorkloadKind::NetThroughput => &["target", "direction", "duration_s", "trim_s"],
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadKind {
    type Err = MicrobenchError;

    fn from_str(s: &str) -> Result<Self> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| MicrobenchError::Spec(format!("unknown workload kind '{s}'")))
    }
}

/// Mapping from parameter name to `mb` flag.
pub const FLAGS: [(&str, &str); 21] = [
    ("iterations", "--iterations"),
    ("workers", "--workers"),
    ("jobs", "--jobs"),
    ("task_units", "--tasks"),
    ("stream", "--kind"),
    ("buffer_bytes", "--buffer"),
    ("inner_reps", "--reps"),
    ("outer_runs", "--runs"),
    ("dir", "--dir"),
    ("mode", "--mode"),
    ("sync", "--sync"),
    ("total_bytes", "--total"),
    ("block_bytes", "--block"),
    ("file_count", "--files"),
    ("seed", "--seed"),
    ("procs", "--procs"),
    ("ops_per_proc", "--ops"),
    ("target", "--target"),
    ("direction", "--direction"),
    ("duration_s", "--duration"),
    ("trim_s", "--trim"),
];

pub fn flag_for(param: &str) -> Option<&'static str> {
    FLAGS.iter().find(|(p, _)| *p == param).map(|(_, f)| *f)
}

/// Parses `4096`, `64KiB`, `64MiB`, `1GiB`, `10MB` and the like.
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, suffix) = s.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("bad size '{s}'"))?;
    let mult: u64 = match suffix.trim() {
        "" | "B" => 1,
        "K" | "KiB" => 1 << 10,
        "M" | "MiB" => 1 << 20,
        "G" | "GiB" => 1 << 30,
        "KB" => 1_000,
        "MB" => 1_000_000,
        "GB" => 1_000_000_000,
        other => return Err(format!("unknown size suffix '{other}'")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size '{s}' overflows"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    /// External payload argv used instead of the built-in kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// A fully resolved workload with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    CpuInt { iterations: u64, workers: usize },
    CpuFloat { iterations: u64, workers: usize },
    CpuParallel { jobs: usize, task_units: usize },
    MemStream { stream: StreamKind, buffer_bytes: usize, inner_reps: u64, outer_runs: u64 },
    DiskSeq { dir: PathBuf, mode: SeqMode, sync: bool, total_bytes: u64, block_bytes: u64 },
    DiskChurn { dir: PathBuf, file_count: usize, seed: u64 },
    DiskMixed { dir: PathBuf, procs: usize, ops_per_proc: usize, seed: u64 },
    NetThroughput { target: String, direction: Direction, duration_s: f64, trim_s: f64 },
}

struct Params<'a> {
    map: &'a BTreeMap<String, Value>,
    errors: Vec<String>,
}

impl Params<'_> {
    fn raw(&self, key: &str) -> Option<&Value> {
        self.map.get(key)
    }

    fn text(&mut self, key: &str) -> Option<String> {
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            other => {
                self.errors.push(format!("{key}: expected a scalar, got {other}"));
                None
            }
        }
    }

    fn count(&mut self, key: &str, default: u64) -> u64 {
        let Some(t) = self.text(key) else { return default };
        match parse_size(&t) {
            Ok(0) => {
                self.errors.push(format!("{key} must be strictly positive"));
                default
            }
            Ok(n) => n,
            Err(e) => {
                self.errors.push(format!("{key}: {e}"));
                default
            }
        }
    }

    fn seed(&mut self, default: u64) -> u64 {
        let Some(t) = self.text("seed") else { return default };
        t.parse::<u64>().or_else(|_| t.parse::<i64>().map(|v| v as u64)).unwrap_or_else(|_| {
            self.errors.push(format!("seed: '{t}' is not a 64-bit integer"));
            default
        })
    }

    fn seconds(&mut self, key: &str, default: f64, allow_zero: bool) -> f64 {
        let Some(t) = self.text(key) else { return default };
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0)) => v,
            _ => {
                let bound = if allow_zero { "non-negative" } else { "strictly positive" };
                self.errors.push(format!("{key} must be a {bound} number of seconds, got '{t}'"));
                default
            }
        }
    }

    fn flag(&mut self, key: &str) -> bool {
        match self.raw(key) {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(Value::String(s)) if matches!(s.as_str(), "true" | "on" | "1" | "yes") => true,
            Some(Value::String(s)) if matches!(s.as_str(), "false" | "off" | "0" | "no") => false,
            Some(other) => {
                self.errors.push(format!("{key}: expected a boolean, got {other}"));
                false
            }
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str, default: T) -> T {
        let Some(t) = self.text(key) else { return default };
        t.parse().unwrap_or_else(|_| {
            self.errors.push(format!("{key}: invalid value '{t}'"));
            default
        })
    }

    fn dir(&mut self) -> PathBuf {
        self.text("dir").map(PathBuf::from).unwrap_or_else(std::env::temp_dir)
    }
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> Self {
        WorkloadSpec { kind, params: BTreeMap::new(), command: None, name: None }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    /// Display label: the explicit name or the kind.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_owned())
    }

    /// Applies defaults and checks every parameter, collecting all problems.
    pub fn resolve(&self) -> std::result::Result<Workload, Vec<String>> {
        let mut p = Params { map: &self.params, errors: Vec::new() };
        for key in self.params.keys() {
            if !self.kind.params().contains(&key.as_str()) {
                p.errors.push(format!("parameter '{key}' does not apply to {}", self.kind));
            }
        }
        if let Some(cmd) = &self.command {
            if cmd.is_empty() || cmd[0].is_empty() {
                p.errors.push("command must name a program".into());
            }
        }
        let w = match self.kind {
            WorkloadKind::CpuInt => Workload::CpuInt {
                iterations: p.count("iterations", 10_000_000),
                workers: p.count("workers", 1) as usize,
            },
            WorkloadKind::CpuFloat => Workload::CpuFloat {
                iterations: p.count("iterations", FLOAT_REFERENCE_ITERATIONS),
                workers: p.count("workers", 1) as usize,
            },
            WorkloadKind::CpuParallel => {
                let jobs = p.count("jobs", cpu::DEFAULT_JOBS as u64) as usize;
                let task_units = p.count("task_units", 64) as usize;
                if task_units < jobs {
                    p.errors.push(format!("{jobs} jobs exceed {task_units} task units"));
                }
                Workload::CpuParallel { jobs, task_units }
            }
            WorkloadKind::MemStream => {
                let buffer_bytes = p.count("buffer_bytes", 64 << 20) as usize;
                if buffer_bytes < mem::MIN_BUFFER_BYTES || buffer_bytes % 8 != 0 {
                    p.errors.push(format!("buffer_bytes {buffer_bytes} must be at least 1 MiB and a multiple of 8"));
                }
                Workload::MemStream {
                    stream: p.parsed("stream", StreamKind::Copy),
                    buffer_bytes,
                    inner_reps: p.count("inner_reps", 10),
                    outer_runs: p.count("outer_runs", 5),
                }
            }
            WorkloadKind::DiskSeq => {
                let mode = match p.text("mode") {
                    None => SeqMode::Write,
                    Some(m) => SeqMode::parse(&m).unwrap_or_else(|| {
                        p.errors.push(format!("mode: expected read or write, got '{m}'"));
                        SeqMode::Write
                    }),
                };
                let sync = p.flag("sync");
                if mode == SeqMode::Read && sync {
                    p.errors.push("sync flag is meaningless for reads".into());
                }
                let total_bytes = p.count("total_bytes", 256 << 20);
                let block_bytes = p.count("block_bytes", 1 << 20);
                if total_bytes % block_bytes != 0 {
                    p.errors.push(format!("block_bytes {block_bytes} does not divide total_bytes {total_bytes}"));
                }
                Workload::DiskSeq { dir: p.dir(), mode, sync, total_bytes, block_bytes }
            }
            WorkloadKind::DiskChurn => {
                Workload::DiskChurn { dir: p.dir(), file_count: p.count("file_count", 512) as usize, seed: p.seed(42) }
            }
            WorkloadKind::DiskMixed => Workload::DiskMixed {
                dir: p.dir(),
                procs: p.count("procs", 4) as usize,
                ops_per_proc: p.count("ops_per_proc", 1000) as usize,
                seed: p.seed(42),
            },
            WorkloadKind::NetThroughput => {
                let target = p.text("target").unwrap_or_else(|| {
                    if self.command.is_none() {
                        p.errors.push("target address is required".into());
                    }
                    String::new()
                });
                let duration_s = p.seconds("duration_s", 180.0, false);
                let trim_s = p.seconds("trim_s", 10.0, true);
                if trim_s >= duration_s {
                    p.errors.push(format!("trim_s {trim_s} must be below duration_s {duration_s}"));
                }
                Workload::NetThroughput { target, direction: p.parsed("direction", Direction::Send), duration_s, trim_s }
            }
        };
        if p.errors.is_empty() {
            Ok(w)
        } else {
            Err(p.errors)
        }
    }

    pub fn validate(&self) -> Vec<String> {
        self.resolve().err().unwrap_or_default()
    }

    /// Payload argv tail: `mb <kind> --flag value ...`, or the external
    /// command when one is set.
    pub fn to_mb_args(&self) -> Vec<String> {
        if let Some(cmd) = &self.command {
            return cmd.clone();
        }
        let mut args = vec!["mb".to_owned(), self.kind.as_str().to_owned()];
        for (key, value) in &self.params {
            let Some(flag) = flag_for(key) else { continue };
            match value {
                Value::Bool(true) => args.push(flag.to_owned()),
                Value::Bool(false) => {}
                Value::String(s) => {
                    args.push(flag.to_owned());
                    args.push(s.clone());
                }
                other => {
                    args.push(flag.to_owned());
                    args.push(other.to_string());
                }
            }
        }
        args
    }

    /// Runs the built-in kernel in this process.
    pub fn run(&self) -> Result<Vec<Sample>> {
        let w = self.resolve().map_err(|errs| MicrobenchError::Spec(errs.join("; ")))?;
        let mut samples = w.run()?;
        for s in &mut samples {
            s.set_meta("workload", self.kind.as_str());
            s.set_meta("params", serde_json::to_value(&self.params).unwrap_or(Value::Null));
            crate::stamp(s);
        }
        Ok(samples)
    }
}

impl Workload {
    pub fn run(&self) -> Result<Vec<Sample>> {
        Ok(match self {
            Workload::CpuInt { iterations, workers } => vec![cpu::cpu_int_rate(*iterations, *workers)?],
            Workload::CpuFloat { iterations, workers } => vec![cpu::cpu_float_rate(*iterations, *workers)?],
            Workload::CpuParallel { jobs, task_units } => vec![cpu::cpu_parallel_build(*jobs, *task_units)?],
            Workload::MemStream { stream, buffer_bytes, inner_reps, outer_runs } => {
                vec![mem::mem_stream(*stream, *buffer_bytes, *inner_reps, *outer_runs)?]
            }
            Workload::DiskSeq { dir, mode, sync, total_bytes, block_bytes } => {
                vec![disk::disk_seq(dir, *mode, *sync, *total_bytes, *block_bytes)?]
            }
            Workload::DiskChurn { dir, file_count, seed } => {
                let (c, d) = disk::disk_churn(dir, *file_count, *seed)?;
                vec![c, d]
            }
            Workload::DiskMixed { dir, procs, ops_per_proc, seed } => {
                vec![disk::disk_mixed(dir, *procs, *ops_per_proc, *seed)?]
            }
            Workload::NetThroughput { target, direction, duration_s, trim_s } => {
                vec![net::net_throughput(target, *direction, *duration_s, *trim_s)?]
            }
        })
    }
}
