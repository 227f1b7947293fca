use std::io::{self, BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::{Outcome, TraceEvent};

/// One bar of a start-up chart: when a service started and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchRecord {
    pub service: String,
    pub module: String,
    pub start_s: f64,
    pub duration_s: f64,
}

/// `(spawn, ready - spawn)` for every ready service; other outcomes are
/// dropped with a warning.
pub fn trace_to_records(trace: &[TraceEvent]) -> Vec<LaunchRecord> {
    trace
        .iter()
        .filter_map(|e| match (e.outcome, e.ready_t_s) {
            (Outcome::Ready, Some(ready)) => Some(LaunchRecord {
                service: e.service.clone(),
                module: e.module.clone(),
                start_s: e.spawn_t_s,
                duration_s: ready - e.spawn_t_s,
            }),
            _ => {
                warn!("excluding service '{}' ({:?})", e.service, e.outcome);
                None
            }
        })
        .collect()
}

pub fn write_records_csv<W: Write>(out: W, records: &[LaunchRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["service", "module", "start_s", "duration_s"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: io::Read>(input: R) -> csv::Result<Vec<LaunchRecord>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input).deserialize().collect()
}

pub fn write_trace<W: Write>(mut out: W, trace: &[TraceEvent]) -> io::Result<()> {
    for e in trace {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trace<R: BufRead>(input: R) -> io::Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
