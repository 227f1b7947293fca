use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use envbench_microbench::WorkloadSpec;
use serde::{Deserialize, Serialize};

use crate::payload::DEFAULT_TIMEOUT_S;
use crate::resources::MIN_INTERVAL_MS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub id: String,
    /// Command prefix; empty means the payload runs directly on the host.
    #[serde(default)]
    pub exec_prefix: Vec<String>,
    #[serde(default)]
    pub extra_env: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
    #[serde(default)]
    pub is_baseline: bool,
    #[serde(default)]
    pub description: String,
}

impl EnvironmentSpec {
    pub fn bare(id: &str) -> Self {
        EnvironmentSpec {
            id: id.into(),
            exec_prefix: Vec::new(),
            extra_env: BTreeMap::new(),
            workdir: None,
            is_baseline: false,
            description: String::new(),
        }
    }

    pub fn wrapped(id: &str, prefix: &[&str]) -> Self {
        EnvironmentSpec { exec_prefix: prefix.iter().map(|s| s.to_string()).collect(), ..Self::bare(id) }
    }

    pub fn baseline(mut self) -> Self {
        self.is_baseline = true;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleave {
    /// All repetitions of a cell run back to back, environment by environment.
    #[default]
    Grouped,
    /// Repetition k of every cell runs before repetition k+1 of any cell.
    RoundRobin,
}

fn default_payload() -> Vec<String> {
    vec!["envbench".into()]
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

fn default_repetitions() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub environments: Vec<EnvironmentSpec>,
    pub workloads: Vec<WorkloadSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub interleave: Interleave,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_interval_ms: Option<u64>,
    /// Program (and leading arguments) that understands `mb <kind>`.
    #[serde(default = "default_payload")]
    pub payload: Vec<String>,
    /// Per-cell ceiling; the payload's process group is killed past it.
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

impl MatrixConfig {
    pub fn new(environments: Vec<EnvironmentSpec>, workloads: Vec<WorkloadSpec>, repetitions: u32) -> Self {
        MatrixConfig {
            environments,
            workloads,
            repetitions,
            interleave: Interleave::Grouped,
            sampling_interval_ms: None,
            payload: default_payload(),
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    pub fn baseline(&self) -> Option<&EnvironmentSpec> {
        self.environments.iter().find(|e| e.is_baseline)
    }
}

/// Checks the whole configuration and returns every violation found, or the
/// normalized configuration (ids and prefixes trimmed).
pub fn validate_config(config: &MatrixConfig) -> Result<MatrixConfig, Vec<String>> {
    let mut errors = Vec::new();
    let mut out = config.clone();
    for env in &mut out.environments {
        env.id = env.id.trim().to_owned();
    }
    if out.environments.is_empty() {
        errors.push("no environments".into());
    }
    if out.workloads.is_empty() {
        errors.push("no workloads".into());
    }
    if out.repetitions == 0 {
        errors.push("repetitions must be at least 1".into());
    }
    let mut seen = HashSet::new();
    for env in &out.environments {
        if env.id.is_empty() {
            errors.push("environment with empty id".into());
        } else if !seen.insert(env.id.as_str()) {
            errors.push(format!("duplicate environment id '{}'", env.id));
        }
        if env.exec_prefix.iter().any(|a| a.is_empty()) || env.exec_prefix.first().is_some_and(|a| a.trim() != a) {
            errors.push(format!("environment '{}' has an empty or padded exec_prefix element", env.id));
        }
    }
    match out.environments.iter().filter(|e| e.is_baseline).count() {
        0 if !out.environments.is_empty() => errors.push("no baseline environment".into()),
        0 | 1 => {}
        _ => errors.push("multiple baselines".into()),
    }
    let mut labels = HashSet::new();
    for (i, w) in out.workloads.iter().enumerate() {
        for e in w.validate() {
            errors.push(format!("workload {} ({}): {e}", i, w.label()));
        }
        if !labels.insert(w.label()) {
            errors.push(format!("duplicate workload label '{}'; set distinct names", w.label()));
        }
        if w.command.is_none() && out.payload.is_empty() {
            errors.push(format!("workload {} ({}) needs a payload program", i, w.label()));
        }
    }
    if let Some(ms) = out.sampling_interval_ms {
        if ms < MIN_INTERVAL_MS {
            errors.push(format!("sampling_interval_ms must be at least {MIN_INTERVAL_MS}, got {ms}"));
        }
    }
    if !(out.timeout_s.is_finite() && out.timeout_s > 0.0) {
        errors.push(format!("timeout_s must be positive, got {}", out.timeout_s));
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use envbench_microbench::WorkloadKind;

    fn config() -> MatrixConfig {
        MatrixConfig::new(
            vec![EnvironmentSpec::bare("bare").baseline(), EnvironmentSpec::wrapped("env", &["/usr/bin/env"])],
            vec![WorkloadSpec::new(WorkloadKind::CpuInt)],
            3,
        )
    }

    #[test]
    fn multiple_baselines() {
        let mut c = config();
        c.environments[1].is_baseline = true;
        assert_eq!(validate_config(&c).unwrap_err(), vec!["multiple baselines".to_string()]);
    }

    #[test]
    fn no_workloads() {
        let mut c = config();
        c.workloads.clear();
        assert_eq!(validate_config(&c).unwrap_err(), vec!["no workloads".to_string()]);
    }

    #[test]
    fn all_violations_reported() {
        let mut c = config();
        c.environments[1].id = "bare".into();
        c.environments[0].is_baseline = false;
        c.repetitions = 0;
        c.sampling_interval_ms = Some(10);
        c.workloads.push(WorkloadSpec::new(WorkloadKind::CpuInt).with("workers", 0));
        let errs = validate_config(&c).unwrap_err();
        assert_eq!(errs.len(), 6, "{errs:?}");
    }

    #[test]
    fn well_formed_echoes_normalized() {
        let mut c = config();
        c.environments.push(EnvironmentSpec::bare("  third "));
        c.workloads.push(WorkloadSpec::new(WorkloadKind::MemStream));
        let ok = validate_config(&c).unwrap();
        assert_eq!(ok.environments[2].id, "third");
        assert_eq!(ok.workloads, c.workloads);
    }

    #[test]
    fn json_document() {
        let doc = r#"{
            "environments": [{"id": "bare", "is_baseline": true}, {"id": "docker", "exec_prefix": ["docker", "run", "--rm", "img"]}],
            "workloads": [{"kind": "cpu-int", "params": {"iterations": 1000}}],
            "repetitions": 10,
            "interleave": "round_robin",
            "sampling_interval_ms": 100
        }"#;
        let c: MatrixConfig = serde_json::from_str(doc).unwrap();
        assert_eq!(c.interleave, Interleave::RoundRobin);
        assert_eq!(c.payload, ["envbench"]);
        assert!(validate_config(&c).is_ok());
        assert!(serde_json::from_str::<MatrixConfig>(r#"{"environments":[],"workloads":[],"bogus":1}"#).is_err());
    }
}
