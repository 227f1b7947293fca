//! Baseline-relative report tables, rendered as CSV or aligned text.

use std::fmt::Write as _;
use std::io;

use envbench_core::stats::{CellOutcome, NormalizedReport};
use envbench_core::Polarity;
use serde::{Deserialize, Serialize};

const CSV_HEADER: [&str; 8] = ["metric", "environment", "baseline", "polarity", "n", "percent", "std_percent", "flag"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    None,
    Min,
    Max,
    Unavailable,
}

impl Flag {
    fn as_str(self) -> &'static str {
        match self {
            Flag::None => "",
            Flag::Min => "min",
            Flag::Max => "max",
            Flag::Unavailable => "unavailable",
        }
    }

    fn parse(s: &str) -> Option<Flag> {
        Some(match s {
            "" => Flag::None,
            "min" => Flag::Min,
            "max" => Flag::Max,
            "unavailable" => Flag::Unavailable,
            _ => return None,
        })
    }

    fn marker(self) -> &'static str {
        match self {
            Flag::Min => " v",
            Flag::Max => " ^",
            _ => "  ",
        }
    }
}

/// One cell at table precision: percentages are rounded to 2 decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub percent: Option<f64>,
    pub std_percent: Option<f64>,
    pub polarity: Option<Polarity>,
    pub n: usize,
    pub flag: Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub caption: String,
    pub baseline: String,
    pub environments: Vec<String>,
    pub metrics: Vec<String>,
    /// Row-major, one row per metric.
    pub cells: Vec<ReportCell>,
    pub footnotes: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Bad { line: usize, message: String },
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn fixed2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

fn footnotes(baseline: &str) -> Vec<String> {
    vec![
        format!("Numbers are percentages of the '{baseline}' baseline; 100.00 is parity and higher is better."),
        "higher_better: 100 * measured / baseline; lower_better: 100 * baseline / measured; raw_ratio: 100 * measured / baseline, not inverted.".into(),
        "std_percent is the ratio 100 * std(environment) / std(baseline), not a difference.".into(),
        "min and max mark the lowest and highest available cell of each metric (v and ^ in the text table).".into(),
    ]
}

/// Marks the extreme cells of each row; rows whose cells are all equal get
/// no marks.
fn flag_rows(cells: &mut [ReportCell], width: usize) {
    if width == 0 {
        return;
    }
    for row in cells.chunks_mut(width) {
        let values: Vec<f64> = row.iter().filter_map(|c| c.percent).collect();
        let (Some(lo), Some(hi)) = (values.iter().copied().reduce(f64::min), values.iter().copied().reduce(f64::max)) else {
            continue;
        };
        if lo == hi {
            continue;
        }
        for c in row.iter_mut() {
            match c.percent {
                Some(p) if p == lo => c.flag = Flag::Min,
                Some(p) if p == hi => c.flag = Flag::Max,
                _ => {}
            }
        }
    }
}

impl ReportTable {
    fn assemble(baseline: String, environments: Vec<String>, metrics: Vec<String>, cells: Vec<ReportCell>) -> Self {
        ReportTable {
            caption: format!("Percentages compared to the {baseline} reference"),
            footnotes: footnotes(&baseline),
            baseline,
            environments,
            metrics,
            cells,
        }
    }

    pub fn from_report(report: &NormalizedReport) -> Self {
        let mut cells: Vec<ReportCell> = report
            .cells
            .iter()
            .map(|c| match c {
                CellOutcome::Available(c) => ReportCell {
                    percent: Some(round2(c.percent)),
                    std_percent: c.std_percent.map(round2),
                    polarity: Some(c.polarity),
                    n: c.n,
                    flag: Flag::None,
                },
                CellOutcome::Unavailable { .. } => {
                    ReportCell { percent: None, std_percent: None, polarity: None, n: 0, flag: Flag::Unavailable }
                }
            })
            .collect();
        flag_rows(&mut cells, report.environments.len());
        ReportTable::assemble(report.baseline_env.clone(), report.environments.clone(), report.metrics.clone(), cells)
    }

    pub fn cell(&self, env: &str, metric: &str) -> Option<&ReportCell> {
        let e = self.environments.iter().position(|x| x == env)?;
        let m = self.metrics.iter().position(|x| x == metric)?;
        self.cells.get(m * self.environments.len() + e)
    }

    /// Long-format CSV: one row per (metric, environment).
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let width = self.environments.len();
        for (m, metric) in self.metrics.iter().enumerate() {
            for (e, env) in self.environments.iter().enumerate() {
                let c = &self.cells[m * width + e];
                w.write_record([
                    metric.as_str(),
                    env.as_str(),
                    self.baseline.as_str(),
                    c.polarity.map(Polarity::as_str).unwrap_or(""),
                    &c.n.to_string(),
                    &fixed2(c.percent),
                    &fixed2(c.std_percent),
                    c.flag.as_str(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, ReportReadError> {
        let mut r = csv::Reader::from_reader(input);
        let mut baseline: Option<String> = None;
        let mut environments: Vec<String> = Vec::new();
        let mut metrics: Vec<String> = Vec::new();
        let mut entries: Vec<(String, String, ReportCell)> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |message: String| ReportReadError::Bad { line, message };
            if rec.len() != CSV_HEADER.len() {
                return Err(bad(format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
            }
            let opt = |s: &str| -> Result<Option<f64>, ReportReadError> {
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| bad(format!("bad number '{s}'")))
            };
            match &baseline {
                None => baseline = Some(rec[2].to_owned()),
                Some(b) if b != &rec[2] => return Err(bad(format!("baseline '{}' differs from '{b}'", &rec[2]))),
                _ => {}
            }
            let polarity = match &rec[3] {
                "" => None,
                p => Some(Polarity::parse(p).ok_or_else(|| bad(format!("unknown polarity '{p}'")))?),
            };
            let cell = ReportCell {
                polarity,
                n: rec[4].parse().map_err(|_| bad(format!("bad count '{}'", &rec[4])))?,
                percent: opt(&rec[5])?,
                std_percent: opt(&rec[6])?,
                flag: Flag::parse(&rec[7]).ok_or_else(|| bad(format!("unknown flag '{}'", &rec[7])))?,
            };
            if !metrics.iter().any(|m| m == &rec[0]) {
                metrics.push(rec[0].to_owned());
            }
            if !environments.iter().any(|e| e == &rec[1]) {
                environments.push(rec[1].to_owned());
            }
            entries.push((rec[0].to_owned(), rec[1].to_owned(), cell));
        }
        let width = environments.len();
        let mut cells: Vec<Option<ReportCell>> = vec![None; width * metrics.len()];
        for (metric, env, cell) in entries {
            let m = metrics.iter().position(|x| *x == metric).expect("collected");
            let e = environments.iter().position(|x| *x == env).expect("collected");
            let slot = &mut cells[m * width + e];
            if slot.is_some() {
                return Err(ReportReadError::Bad { line: 0, message: format!("duplicate cell ({metric}, {env})") });
            }
            *slot = Some(cell);
        }
        let cells: Option<Vec<ReportCell>> = cells.into_iter().collect();
        let cells = cells.ok_or_else(|| ReportReadError::Bad { line: 0, message: "table is not rectangular".into() })?;
        Ok(ReportTable::assemble(baseline.unwrap_or_default(), environments, metrics, cells))
    }

    /// Aligned text with margin markers and footnotes.
    pub fn render_text(&self) -> String {
        let width = self.environments.len();
        let mut header = vec!["metric".to_owned()];
        header.extend(self.environments.iter().cloned());
        let mut rows = vec![header];
        for (m, metric) in self.metrics.iter().enumerate() {
            let mut row = vec![metric.clone()];
            for c in &self.cells[m * width..(m + 1) * width] {
                row.push(match c.percent {
                    Some(p) => format!("{p:.2}{}", c.flag.marker()),
                    None => "n/a  ".into(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> =
            (0..=width).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.caption);
        let _ = writeln!(out);
        for row in &rows {
            let mut line = format!("{:<w$}", row[0], w = widths[0]);
            for (i, cell) in row.iter().enumerate().skip(1) {
                let _ = write!(line, "  {:>w$}", cell, w = widths[i]);
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        let _ = writeln!(out);
        for (i, f) in self.footnotes.iter().enumerate() {
            let _ = writeln!(out, "[{}] {f}", i + 1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use envbench_core::stats::{normalize_report, Aggregation};
    use envbench_core::{Sample, Unit};

    fn sample(metric: &str, value: f64, polarity: Polarity) -> Sample {
        Sample::new(metric, value, Unit::OpsPerS, polarity, 1.0)
    }

    #[test]
    fn ninety_percent_cell_is_flagged_min() {
        let s = [sample("cpu.int", 1000.0, Polarity::HigherBetter), sample("cpu.int", 900.0, Polarity::HigherBetter)];
        let obs = [("bare", &s[0]), ("kvm", &s[1])];
        let t = ReportTable::from_report(&normalize_report(obs, "bare", Aggregation::Mean).unwrap());
        assert_eq!(t.cell("kvm", "cpu.int").unwrap().percent, Some(90.0));
        assert_eq!(t.cell("kvm", "cpu.int").unwrap().flag, Flag::Min);
        assert_eq!(t.cell("bare", "cpu.int").unwrap().flag, Flag::Max);
        let text = t.render_text();
        assert!(text.contains("90.00 v"), "{text}");
    }

    #[test]
    fn equal_rows_are_unflagged() {
        let s = sample("m", 5.0, Polarity::LowerBetter);
        let t = ReportTable::from_report(&normalize_report([("a", &s), ("b", &s)], "a", Aggregation::Mean).unwrap());
        assert!(t.cells.iter().all(|c| c.flag == Flag::None && c.percent == Some(100.0)));
    }

    #[test]
    fn unavailable_cells_round_trip() {
        let s = [sample("m1", 3.0, Polarity::HigherBetter), sample("m2", 2.0, Polarity::HigherBetter)];
        let obs = [("bare", &s[0]), ("docker", &s[0]), ("docker", &s[1])];
        let t = ReportTable::from_report(&normalize_report(obs, "bare", Aggregation::Mean).unwrap());
        assert_eq!(t.cell("docker", "m2").unwrap().flag, Flag::Unavailable);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(ReportTable::read_csv(buf.as_slice()).unwrap(), t);
        assert!(t.render_text().contains("n/a"));
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let text = "metric,environment,baseline,polarity,n,percent,std_percent,flag\nm,a,a,higher_better,1,100.00,,\nn,b,a,higher_better,1,100.00,,\n";
        assert!(ReportTable::read_csv(text.as_bytes()).is_err());
    }
}
