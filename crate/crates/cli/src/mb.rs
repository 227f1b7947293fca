use std::io::Write;

use clap::Args;
use envbench_microbench::{net, WorkloadKind, WorkloadSpec};
use serde_json::Value;

use crate::{exit, Failure, Outcome};

#[derive(Debug, Args)]
#[command(after_help = "Kinds: cpu-int cpu-float cpu-parallel mem-stream disk-seq disk-churn disk-mixed net-throughput, \
or `serve` to run the network sink.\nSizes accept KiB/MiB/GiB and KB/MB/GB suffixes.")]
pub struct MbArgs {
    /// Workload kind.
    pub kind: String,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    #[arg(long)]
    pub jobs: Option<String>,
    #[arg(long)]
    pub tasks: Option<String>,
    /// Stream kernel: copy, scale, add, triad, int_read, int_write, float_read, float_write.
    #[arg(long = "kind")]
    pub stream: Option<String>,
    #[arg(long)]
    pub buffer: Option<String>,
    #[arg(long)]
    pub reps: Option<String>,
    #[arg(long)]
    pub runs: Option<String>,
    #[arg(long)]
    pub dir: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Flush after every block (writes only).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sync: Option<String>,
    #[arg(long)]
    pub total: Option<String>,
    #[arg(long)]
    pub block: Option<String>,
    #[arg(long)]
    pub files: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub procs: Option<String>,
    #[arg(long)]
    pub ops: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub direction: Option<String>,
    #[arg(long)]
    pub duration: Option<String>,
    #[arg(long)]
    pub trim: Option<String>,
    /// Listen address for `serve`.
    #[arg(long, default_value = "0.0.0.0:5201")]
    pub bind: String,
}

impl MbArgs {
    fn params(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("iterations", &self.iterations),
            ("workers", &self.workers),
            ("jobs", &self.jobs),
            ("task_units", &self.tasks),
            ("stream", &self.stream),
            ("buffer_bytes", &self.buffer),
            ("inner_reps", &self.reps),
            ("outer_runs", &self.runs),
            ("dir", &self.dir),
            ("mode", &self.mode),
            ("sync", &self.sync),
            ("total_bytes", &self.total),
            ("block_bytes", &self.block),
            ("file_count", &self.files),
            ("seed", &self.seed),
            ("procs", &self.procs),
            ("ops_per_proc", &self.ops),
            ("target", &self.target),
            ("direction", &self.direction),
            ("duration_s", &self.duration),
            ("trim_s", &self.trim),
        ]
    }

    /// Builds the workload spec the flags describe.
    pub fn spec(&self) -> Result<WorkloadSpec, Failure> {
        let kind: WorkloadKind = self.kind.parse().map_err(|_| {
            let kinds: Vec<&str> = WorkloadKind::ALL.iter().map(|k| k.as_str()).collect();
            Failure::usage(format!("unknown workload kind '{}'; expected one of {} or serve", self.kind, kinds.join(", ")))
        })?;
        let mut spec = WorkloadSpec::new(kind);
        for (key, value) in self.params() {
            if let Some(v) = value {
                spec.params.insert(key.to_owned(), Value::String(v.clone()));
            }
        }
        Ok(spec)
    }
}

pub fn cmd_mb(args: MbArgs) -> Outcome {
    if args.kind == "serve" {
        eprintln!("serving on {}", args.bind);
        net::net_serve(&args.bind).map_err(|e| Failure::new(exit::WORKLOAD, e.to_string()))?;
        return Ok(exit::OK);
    }
    let spec = args.spec()?;
    spec.resolve().map_err(|errs| Failure::usage(errs.join("; ")))?;
    let samples = spec.run().map_err(|e| Failure::new(exit::WORKLOAD, e.to_string()))?;
    let repetition = std::env::var("ENVBENCH_REPETITION").ok().and_then(|r| r.parse::<u64>().ok());
    let env = std::env::var("ENVBENCH_ENV").ok();
    let mut out = std::io::stdout().lock();
    for mut s in samples {
        if let Some(r) = repetition {
            s.set_meta("repetition", r);
        }
        if let Some(e) = &env {
            s.set_meta("env", e.as_str());
        }
        writeln!(out, "{}", s.to_line()).map_err(|e| Failure::new(exit::WORKLOAD, e.to_string()))?;
    }
    Ok(exit::OK)
}
