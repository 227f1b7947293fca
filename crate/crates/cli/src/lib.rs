//! The `envbench` command line: micro-benchmark payload (`mb`), matrix runner
//! and report (`bench`), and start-up profiling (`launch`).
//!
//! Exit codes are part of the interface, see [`exit`].

pub mod bench;
pub mod launch;
pub mod mb;
pub mod report;

use std::fs::{File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use report::{Flag, ReportCell, ReportTable};

pub mod exit {
    pub const OK: i32 = 0;
    pub const WORKLOAD: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PARTIAL: i32 = 3;
    pub const REPORT: i32 = 4;
    pub const INVARIANT: i32 = 5;
}

/// A command failure: exit code plus the diagnostic for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure::new(exit::USAGE, message)
    }
}

pub type Outcome = Result<i32, Failure>;

#[derive(Debug, Parser)]
#[command(name = "envbench", version, about = "Environment benchmarking and start-up profiling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one micro-benchmark and print its sample lines.
    Mb(mb::MbArgs),
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    #[command(subcommand)]
    Launch(launch::LaunchCommand),
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Mb(args) => mb::cmd_mb(args),
        Command::Bench(cmd) => bench::dispatch(cmd),
        Command::Launch(cmd) => launch::dispatch(cmd),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("envbench: {}", f.message);
            f.code
        }
    }
}

/// Opens an output file. Existing files are refused unless `force` is set.
pub fn create_output(path: &Path, force: bool) -> Result<File, Failure> {
    let mut opts = OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    opts.open(path).map_err(|e| match e.kind() {
        io::ErrorKind::AlreadyExists => {
            Failure::usage(format!("{} exists; pass --force to overwrite", path.display()))
        }
        _ => Failure::usage(format!("cannot create {}: {e}", path.display())),
    })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Output sink: a file (append-or-fail) or standard output.
pub(crate) fn sink(path: Option<&PathBuf>, force: bool) -> Result<Box<dyn io::Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(create_output(p, force)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Shortest of `{:.6}` with trailing zeros removed: 7.318, 8.171496.
pub fn format_seconds(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_formatting() {
        assert_eq!(format_seconds(0.759 + 6.559), "7.318");
        assert_eq!(format_seconds(8.171496), "8.171496");
        assert_eq!(format_seconds(30.0), "30");
    }

    #[test]
    fn outputs_refuse_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        create_output(&p, false).unwrap();
        let err = create_output(&p, false).unwrap_err();
        assert_eq!(err.code, exit::USAGE);
        assert!(err.message.contains("--force"));
        create_output(&p, true).unwrap();
    }
}
