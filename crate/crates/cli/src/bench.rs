use std::io::Write;
use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use envbench_core::stats::{normalize_report, Aggregation, StatsError};
use envbench_matrix::{read_results, run_matrix, validate_config, MatrixConfig, MatrixError, RunRecord};
use log::warn;

use crate::report::ReportTable;
use crate::{create_output, exit, read_json, sink, Failure, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Run every (environment, workload, repetition) cell of a matrix config.
    Run {
        config: PathBuf,
        /// JSONL results file; records are appended.
        #[arg(long, env = "ENVBENCH_RESULTS")]
        results: PathBuf,
        /// Truncate the results file first.
        #[arg(long)]
        force: bool,
    },
    /// Baseline-relative report over a results file.
    Report {
        #[arg(env = "ENVBENCH_RESULTS")]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
        /// Baseline environment; defaults to the one recorded as baseline.
        #[arg(long)]
        baseline: Option<String>,
        /// Aggregate repetitions by median instead of mean.
        #[arg(long)]
        median: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

pub fn dispatch(cmd: BenchCommand) -> Outcome {
    match cmd {
        BenchCommand::Run { config, results, force } => cmd_bench_run(&config, &results, force),
        BenchCommand::Report { results, format, baseline, median, output, force } => {
            let aggregation = if median { Aggregation::Median } else { Aggregation::Mean };
            let table = build_report(&results, baseline.as_deref(), aggregation)?;
            let mut out = sink(output.as_ref(), force)?;
            let written = match format {
                ReportFormat::Csv => table.write_csv(&mut out).map_err(|e| e.to_string()),
                ReportFormat::Table => out.write_all(table.render_text().as_bytes()).map_err(|e| e.to_string()),
            };
            written.and_then(|_| out.flush().map_err(|e| e.to_string())).map_err(|e| Failure::new(exit::USAGE, e))?;
            Ok(exit::OK)
        }
    }
}

pub fn cmd_bench_run(config_path: &PathBuf, results: &PathBuf, force: bool) -> Outcome {
    let config: MatrixConfig = read_json(config_path)?;
    validate_config(&config).map_err(|errs| {
        Failure::usage(format!("invalid matrix configuration:\n  {}", errs.join("\n  ")))
    })?;
    if force {
        drop(create_output(results, true)?);
    }
    let mut failed = 0usize;
    let records = run_matrix(&config, results, |i, total, r| {
        if !r.succeeded() {
            failed += 1;
        }
        eprintln!(
            "[{}/{}] {} {} rep {}: {:?}",
            i + 1,
            total,
            r.env_id,
            r.workload_label(),
            r.repetition,
            r.status
        );
    })
    .map_err(|e| match e {
        MatrixError::Invalid(errs) => Failure::usage(errs.join("; ")),
        other => Failure::new(exit::WORKLOAD, other.to_string()),
    })?;
    eprintln!("{} records appended to {}", records.len(), results.display());
    Ok(if failed == 0 { exit::OK } else { exit::PARTIAL })
}

fn baseline_of(records: &[RunRecord]) -> Option<String> {
    records.iter().find(|r| r.baseline).map(|r| r.env_id.clone())
}

pub fn build_report(results: &PathBuf, baseline: Option<&str>, aggregation: Aggregation) -> Result<ReportTable, Failure> {
    let (records, bad) =
        read_results(results).map_err(|e| Failure::usage(format!("{}: {e}", results.display())))?;
    if !bad.is_empty() {
        warn!("skipping unparseable lines {bad:?} of {}", results.display());
    }
    let baseline = match baseline.map(str::to_owned).or_else(|| baseline_of(&records)) {
        Some(b) => b,
        None => return Err(Failure::new(exit::REPORT, "no baseline environment in results")),
    };
    let observations = records.iter().filter(|r| r.succeeded()).flat_map(|r| r.samples().map(|s| (r.env_id.as_str(), s)));
    let report = normalize_report(observations, &baseline, aggregation).map_err(|e| match e {
        StatsError::MissingBaseline(_) => Failure::new(exit::REPORT, e.to_string()),
        other => Failure::new(exit::INVARIANT, other.to_string()),
    })?;
    Ok(ReportTable::from_report(&report))
}
