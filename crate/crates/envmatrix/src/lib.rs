//! Environment-matrix runner.
//!
//! An environment is an opaque exec prefix (empty for bare metal, or e.g. a
//! container-engine `run` command or a VM remote shell) that must accept the
//! payload argv appended verbatim. Provisioning and tuning those
//! environments is left to the operator. Cells run strictly one at a time so
//! they never contend for CPU or disk, and every finished cell is appended to
//! the results file before the next one starts.

mod config;
mod payload;
pub mod resources;

pub use config::{validate_config, EnvironmentSpec, Interleave, MatrixConfig};
pub use payload::{run_payload, RunRecord, RunStatus, DEFAULT_TIMEOUT_S};
pub use resources::{sample_resources, ResourcePoint, ResourceSummary, ResourceTrace};

use std::fs::OpenOptions;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use envbench_microbench::WorkloadSpec;
use log::info;

#[derive(Debug, thiserror::Error)]
pub enum MatrixError {
    #[error("invalid matrix configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("results file {}: {source}", path.display())]
    Results {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// One cell of the matrix in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub env: usize,
    pub workload: usize,
    pub repetition: u32,
}

/// Execution order of every (environment, workload, repetition) cell.
pub fn schedule(config: &MatrixConfig) -> Vec<Cell> {
    let (envs, loads, reps) = (config.environments.len(), config.workloads.len(), config.repetitions);
    let mut cells = Vec::with_capacity(envs * loads * reps as usize);
    match config.interleave {
        Interleave::Grouped => {
            for env in 0..envs {
                for workload in 0..loads {
                    for repetition in 0..reps {
                        cells.push(Cell { env, workload, repetition });
                    }
                }
            }
        }
        Interleave::RoundRobin => {
            for repetition in 0..reps {
                for env in 0..envs {
                    for workload in 0..loads {
                        cells.push(Cell { env, workload, repetition });
                    }
                }
            }
        }
    }
    cells
}

/// Payload argv for a workload: its external command, or the configured
/// payload program followed by the `mb` arguments.
pub fn payload_argv(config: &MatrixConfig, workload: &WorkloadSpec) -> Vec<String> {
    match &workload.command {
        Some(cmd) => cmd.clone(),
        None => config.payload.iter().cloned().chain(workload.to_mb_args()).collect(),
    }
}

/// Runs every cell sequentially, appending each record to `results` as soon
/// as it finishes. `progress` sees each record with its position.
pub fn run_matrix(
    config: &MatrixConfig,
    results: &Path,
    mut progress: impl FnMut(usize, usize, &RunRecord),
) -> Result<Vec<RunRecord>, MatrixError> {
    let config = validate_config(config).map_err(MatrixError::Invalid)?;
    let results_err = |source| MatrixError::Results { path: results.to_path_buf(), source };
    let mut file = OpenOptions::new().create(true).append(true).open(results).map_err(results_err)?;
    let cells = schedule(&config);
    let mut records = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let env = &config.environments[cell.env];
        let workload = &config.workloads[cell.workload];
        let argv = payload_argv(&config, workload);
        info!("cell {}/{}: {} {} rep {}", i + 1, cells.len(), env.id, workload.label(), cell.repetition);
        let mut record = run_payload(env, &argv, config.sampling_interval_ms, config.timeout_s, cell.repetition);
        record.workload = Some(workload.clone());
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).and_then(|_| file.flush()).map_err(results_err)?;
        progress(i, cells.len(), &record);
        records.push(record);
    }
    file.sync_all().map_err(results_err)?;
    Ok(records)
}

/// Reads a results file; returns the records and the numbers of lines that
/// failed to parse.
pub fn read_results(path: &Path) -> io::Result<(Vec<RunRecord>, Vec<usize>)> {
    let f = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(&line) {
            Ok(r) => records.push(r),
            Err(_) => bad.push(i + 1),
        }
    }
    Ok((records, bad))
}
