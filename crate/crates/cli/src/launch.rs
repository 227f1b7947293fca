use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Subcommand, ValueEnum};
use envbench_core::grouping::{optimize_exhaustive, optimize_local, SearchError, MAX_EXHAUSTIVE_MODULES};
use envbench_core::launchsim::{calibrate, check_timeline, replay_total, simulate, SimError};
use envbench_core::{Graph, GroupingPlan, Model, Search};
use envbench_launchrec::{
    read_records_csv, record_launch, trace_to_records, write_records_csv, write_trace, LaunchError, LaunchMode,
    LaunchPlan,
};

use crate::{create_output, exit, format_seconds, read_json, sink, Failure, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Exhaustive up to the module cap, local search beyond it.
    Auto,
    Exhaustive,
    Local,
}

#[derive(Debug, Subcommand)]
pub enum LaunchCommand {
    /// Spawn the services of a launch plan and record when each became ready.
    Record {
        plan: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Parallel)]
        mode: Mode,
        /// Records CSV (service,module,start_s,duration_s).
        #[arg(long)]
        records: PathBuf,
        /// Raw trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Simulate one grouping plan and emit the node timeline as CSV.
    Simulate {
        graph: PathBuf,
        plan: PathBuf,
        model: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Search for the grouping plan with the shortest start-up.
    Optimize {
        graph: PathBuf,
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
        /// Worker threads for exhaustive search.
        #[arg(long)]
        lanes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Fit the orchestrator readiness model to (containers, seconds) points.
    Calibrate {
        /// Comma-separated `containers:seconds` pairs.
        #[arg(long)]
        points: String,
        /// Runtime initialization delay added after readiness.
        #[arg(long, default_value_t = 0.0)]
        init: f64,
        /// Parallel lanes available to the services.
        #[arg(long)]
        cores: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Print the total start-up time of a records CSV.
    Replay { records: PathBuf },
}

pub fn dispatch(cmd: LaunchCommand) -> Outcome {
    match cmd {
        LaunchCommand::Record { plan, mode, records, trace, force } => cmd_record(&plan, mode, &records, trace.as_ref(), force),
        LaunchCommand::Simulate { graph, plan, model, output, force } => {
            cmd_simulate(&graph, &plan, &model, output.as_ref(), force)
        }
        LaunchCommand::Optimize { graph, model, method, lanes, seed, max_iters, output, force } => {
            cmd_optimize(&graph, &model, method, lanes, seed, max_iters, output.as_ref(), force)
        }
        LaunchCommand::Calibrate { points, init, cores, output, force } => {
            cmd_calibrate(&points, init, cores, output.as_ref(), force)
        }
        LaunchCommand::Replay { records } => cmd_replay(&records),
    }
}

fn describe(e: &SimError) -> String {
    fn list<E: std::fmt::Display>(what: &str, errs: &[E]) -> String {
        let items: Vec<String> = errs.iter().map(ToString::to_string).collect();
        format!("invalid {what}: {}", items.join("; "))
    }
    match e {
        SimError::InvalidGraph(errs) => list("graph", errs),
        SimError::InvalidGrouping(errs) => list("grouping", errs),
        SimError::InvalidModel(err) => format!("invalid model: {err}"),
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure::new(exit::USAGE, format!("write failed: {e}"))
}

fn cmd_record(plan: &PathBuf, mode: Mode, records: &PathBuf, trace: Option<&PathBuf>, force: bool) -> Outcome {
    let plan: LaunchPlan = read_json(plan)?;
    let mode = match mode {
        Mode::Parallel => LaunchMode::Parallel,
        Mode::Sequential => LaunchMode::Sequential,
    };
    // open outputs first so a refused overwrite costs no launch
    let records_file = create_output(records, force)?;
    let trace_file = trace.map(|p| create_output(p, force)).transpose()?;
    let events = record_launch(&plan.entries, mode).map_err(|e| match e {
        LaunchError::Invalid(errs) => Failure::usage(errs.join("; ")),
        other => Failure::new(exit::WORKLOAD, other.to_string()),
    })?;
    if let Some(f) = trace_file {
        write_trace(std::io::BufWriter::new(f), &events).map_err(io_failure)?;
    }
    let recs = trace_to_records(&events);
    write_records_csv(records_file, &recs).map_err(io_failure)?;
    for e in &events {
        eprintln!("{:<24} {:?} ready_t_s={}", e.service, e.outcome, e.ready_t_s.map(format_seconds).unwrap_or("-".into()));
    }
    Ok(if recs.len() == events.len() { exit::OK } else { exit::WORKLOAD })
}

fn cmd_simulate(graph: &PathBuf, plan: &PathBuf, model: &PathBuf, output: Option<&PathBuf>, force: bool) -> Outcome {
    let graph: Graph = read_json(graph)?;
    let plan: GroupingPlan = read_json(plan)?;
    let model: Model = read_json(model)?;
    let timeline = simulate(&graph, &plan, &model).map_err(|e| Failure::usage(describe(&e)))?;
    let problems = check_timeline(&graph, &model, &timeline);
    if !problems.is_empty() {
        return Err(Failure::new(exit::INVARIANT, format!("timeline contract violated: {}", problems.join("; "))));
    }
    let mut out = sink(output, force)?;
    timeline.write_csv(&mut out).map_err(io_failure)?;
    out.flush().map_err(io_failure)?;
    let total = format!("total_s {}", format_seconds(timeline.total_s));
    if output.is_some() {
        println!("{total}");
    } else {
        eprintln!("{total}");
    }
    Ok(exit::OK)
}

/// Human table of a plan's blocks.
pub fn plan_table(result: &Search) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:?} search: {} blocks, total {} s, {} plans evaluated",
        result.method,
        result.block_count(),
        format_seconds(result.best_total_s),
        result.evaluated
    );
    for (i, b) in result.best_plan.blocks().iter().enumerate() {
        let _ = writeln!(s, "  {:>3}  {}", i, b.join(", "));
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    graph: &PathBuf,
    model: &PathBuf,
    method: Method,
    lanes: Option<usize>,
    seed: u64,
    max_iters: usize,
    output: Option<&PathBuf>,
    force: bool,
) -> Outcome {
    let graph: Graph = read_json(graph)?;
    let model: Model = read_json(model)?;
    let exhaustive = match method {
        Method::Auto => graph.modules.len() <= MAX_EXHAUSTIVE_MODULES,
        Method::Exhaustive => true,
        Method::Local => false,
    };
    let lanes = lanes.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = if exhaustive {
        optimize_exhaustive(&graph, &model, lanes)
    } else {
        optimize_local(&graph, &model, seed, max_iters)
    }
    .map_err(|e| match e {
        SearchError::Input(e) => Failure::usage(describe(&e)),
        other => Failure::usage(other.to_string()),
    })?;

    let check = simulate(&graph, &result.best_plan, &model).map_err(|e| Failure::new(exit::INVARIANT, e.to_string()))?;
    if check.total_s != result.best_total_s {
        return Err(Failure::new(
            exit::INVARIANT,
            format!("reported total {} differs from re-simulated {}", result.best_total_s, check.total_s),
        ));
    }
    let mut out = sink(output, force)?;
    serde_json::to_writer_pretty(&mut out, &result).map_err(io_failure)?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_failure)?;
    if output.is_some() {
        print!("{}", plan_table(&result));
    } else {
        eprint!("{}", plan_table(&result));
    }
    Ok(exit::OK)
}

/// Parses `1:2.446,10:2.987`.
pub fn parse_points(s: &str) -> Result<Vec<(usize, f64)>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (n, t) = p.split_once(':').ok_or_else(|| format!("point '{p}' is not containers:seconds"))?;
            let n: usize = n.trim().parse().map_err(|_| format!("bad container count in '{p}'"))?;
            let t: f64 = t.trim().parse().map_err(|_| format!("bad seconds in '{p}'"))?;
            if !t.is_finite() {
                return Err(format!("non-finite seconds in '{p}'"));
            }
            Ok((n, t))
        })
        .collect()
}

fn cmd_calibrate(points: &str, init: f64, cores: Option<usize>, output: Option<&PathBuf>, force: bool) -> Outcome {
    let points = parse_points(points).map_err(Failure::usage)?;
    let fit = calibrate(&points, init, cores).map_err(|e| Failure::usage(e.to_string()))?;
    fit.model.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let mut out = sink(output, force)?;
    serde_json::to_writer_pretty(&mut out, &fit.model).map_err(io_failure)?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_failure)?;
    eprintln!(
        "ready(n) = {} + {} * n, residual rms {}{}",
        fit.model.ready_intercept_a,
        fit.model.ready_slope_b,
        fit.residual_rms,
        if fit.clamped { format!(" (fitted slope {} clamped to 0)", fit.fitted_slope) } else { String::new() }
    );
    Ok(exit::OK)
}

fn cmd_replay(records: &PathBuf) -> Outcome {
    let f = File::open(records).map_err(|e| Failure::usage(format!("{}: {e}", records.display())))?;
    let recs = read_records_csv(BufReader::new(f)).map_err(|e| Failure::usage(format!("{}: {e}", records.display())))?;
    let pairs: Vec<(f64, f64)> = recs.iter().map(|r| (r.start_s, r.duration_s)).collect();
    let total = replay_total(&pairs).map_err(|e| Failure::usage(e.to_string()))?;
    println!("{}", format_seconds(total));
    Ok(exit::OK)
}
