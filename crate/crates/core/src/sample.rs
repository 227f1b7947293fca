//! The measurement record every workload emits, and its one-line JSON wire
//! format.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "ops_per_s")]
    OpsPerS,
    #[serde(rename = "MB_per_s")]
    MegabytesPerS,
    #[serde(rename = "Mbit_per_s")]
    MegabitsPerS,
    #[serde(rename = "seconds")]
    Seconds,
    #[serde(rename = "files_per_s")]
    FilesPerS,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::OpsPerS => "ops_per_s",
            Unit::MegabytesPerS => "MB_per_s",
            Unit::MegabitsPerS => "Mbit_per_s",
            Unit::Seconds => "seconds",
            Unit::FilesPerS => "files_per_s",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which direction of a metric counts as an improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    HigherBetter,
    LowerBetter,
    /// Neutral consumption ratio (utilization); above 100 means more use.
    RawRatio,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::HigherBetter => "higher_better",
            Polarity::LowerBetter => "lower_better",
            Polarity::RawRatio => "raw_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "higher_better" => Some(Polarity::HigherBetter),
            "lower_better" => Some(Polarity::LowerBetter),
            "raw_ratio" => Some(Polarity::RawRatio),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub metric: String,
    pub value: f64,
    pub unit: Unit,
    pub polarity: Polarity,
    pub elapsed_s: f64,
    pub bytes_processed: Option<u64>,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("sample value {0} is not a finite non-negative number")]
    BadValue(f64),
    #[error("elapsed time {0} must be positive and finite")]
    BadElapsed(f64),
    #[error("metric name is empty")]
    EmptyMetric,
    #[error("rate {value} MB/s disagrees with {bytes} bytes over {elapsed_s} s by more than 0.5%")]
    RateMismatch { value: f64, bytes: u64, elapsed_s: f64 },
}

/// Relative tolerance of the rate identity `value * elapsed == volume`.
pub const RATE_IDENTITY_TOLERANCE: f64 = 0.005;

impl Sample {
    pub fn new(metric: impl Into<String>, value: f64, unit: Unit, polarity: Polarity, elapsed_s: f64) -> Self {
        Sample {
            metric: metric.into(),
            value,
            unit,
            polarity,
            elapsed_s,
            bytes_processed: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_bytes(mut self, bytes: u64) -> Self {
        self.bytes_processed = Some(bytes);
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_owned(), value.into());
        self
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<Value>) {
        self.meta.insert(key.to_owned(), value.into());
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.metric.is_empty() {
            return Err(SampleError::EmptyMetric);
        }
        if !self.value.is_finite() || self.value < 0.0 {
            return Err(SampleError::BadValue(self.value));
        }
        if !self.elapsed_s.is_finite() || self.elapsed_s <= 0.0 {
            return Err(SampleError::BadElapsed(self.elapsed_s));
        }
        if let (Some(bytes), Unit::MegabytesPerS) = (self.bytes_processed, self.unit) {
            if !rate_identity_holds(self.value, bytes, self.elapsed_s) {
                return Err(SampleError::RateMismatch {
                    value: self.value,
                    bytes,
                    elapsed_s: self.elapsed_s,
                });
            }
        }
        Ok(())
    }

    /// Serializes to the single-line JSON wire format.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }

    /// Parses one wire line; `None` for anything that is not a sample object.
    pub fn parse_line(line: &str) -> Option<Sample> {
        let line = line.trim();
        if !line.starts_with('{') {
            return None;
        }
        let sample: Sample = serde_json::from_str(line).ok()?;
        if !sample.value.is_finite() || sample.metric.is_empty() {
            return None;
        }
        Some(sample)
    }

    /// The last well-formed sample line of a payload's standard output.
    pub fn last_in(output: &str) -> Option<Sample> {
        output.lines().rev().find_map(Sample::parse_line)
    }

    /// Every well-formed sample line in output order.
    pub fn all_in(output: &str) -> Vec<Sample> {
        output.lines().filter_map(Sample::parse_line).collect()
    }
}

/// `|value - bytes / (elapsed * 1e6)| <= 0.5% of value`.
pub fn rate_identity_holds(value_mb_s: f64, bytes: u64, elapsed_s: f64) -> bool {
    let recomputed = bytes as f64 / (elapsed_s * 1e6);
    (value_mb_s - recomputed).abs() <= RATE_IDENTITY_TOLERANCE * value_mb_s.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        Sample::new("disk.seq.write.nosync", 250.0, Unit::MegabytesPerS, Polarity::HigherBetter, 1.0)
            .with_bytes(250_000_000)
            .with_meta("rep", 3)
    }

    #[test]
    fn wire_line_has_all_keys() {
        let line = sample().to_line();
        let v: Value = serde_json::from_str(&line).unwrap();
        for key in ["metric", "value", "unit", "polarity", "elapsed_s", "bytes_processed", "meta"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
        assert_eq!(v["unit"], "MB_per_s");
        assert_eq!(v["polarity"], "higher_better");
        assert!(!line.contains('\n'));
    }

    #[test]
    fn absent_bytes_serialize_as_null() {
        let s = Sample::new("cpu.int", 1.0, Unit::OpsPerS, Polarity::HigherBetter, 1.0);
        let v: Value = serde_json::from_str(&s.to_line()).unwrap();
        assert!(v["bytes_processed"].is_null());
    }

    #[test]
    fn last_well_formed_line_wins() {
        let first = sample();
        let mut second = sample();
        second.value = 125.0;
        second.bytes_processed = Some(125_000_000);
        let out = format!("starting\n{}\nnoise {{not json\n{}\ntrailing log\n", first.to_line(), second.to_line());
        assert_eq!(Sample::last_in(&out), Some(second));
        assert_eq!(Sample::all_in(&out).len(), 2);
    }

    #[test]
    fn garbage_yields_none() {
        assert_eq!(Sample::last_in("hello\n{\"metric\": 3}\n"), None);
        assert_eq!(Sample::last_in(""), None);
    }

    #[test]
    fn validate_rate_identity() {
        assert!(sample().validate().is_ok());
        let mut off = sample();
        off.value = 260.0;
        assert!(matches!(off.validate(), Err(SampleError::RateMismatch { .. })));
        let mut bad = sample();
        bad.elapsed_s = 0.0;
        assert_eq!(bad.validate(), Err(SampleError::BadElapsed(0.0)));
        bad = sample();
        bad.value = f64::NAN;
        assert!(matches!(bad.validate(), Err(SampleError::BadValue(_))));
    }
}
