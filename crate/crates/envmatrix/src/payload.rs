use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use envbench_core::Sample;
use envbench_microbench::WorkloadSpec;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::EnvironmentSpec;
use crate::resources::{ResourceTrace, Sampler};

pub const DEFAULT_TIMEOUT_S: f64 = 3600.0;
const STDERR_TAIL: usize = 64 * 1024;
const STDOUT_CAP: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    /// Nonzero exit or death by signal.
    Failed,
    SpawnFailure,
    /// Exit 0 without any sample line on standard output.
    SampleParseFailure,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env_id: String,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
    pub argv: Vec<String>,
    pub repetition: u32,
    /// The last sample line the payload printed.
    pub sample: Option<Sample>,
    /// Sample lines printed before the last one, for payloads emitting several.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_samples: Vec<Sample>,
    pub start_unix_s: f64,
    pub end_unix_s: f64,
    pub status: RunStatus,
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub diagnostics: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<ResourceTrace>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Success
    }

    /// Every sample of a successful record, in output order.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.extra_samples.iter().chain(self.sample.iter())
    }

    /// Label of the workload this record ran.
    pub fn workload_label(&self) -> String {
        self.workload.as_ref().map(|w| w.label()).unwrap_or_else(|| self.argv.join(" "))
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn reader<R: Read + Send + 'static>(mut src: R, cap: usize, keep_tail: bool) -> JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut out = Vec::new();
        let mut buf = [0u8; 8192];
        while let Ok(n) = src.read(&mut buf) {
            if n == 0 {
                break;
            }
            out.extend_from_slice(&buf[..n]);
            if out.len() > cap {
                if keep_tail {
                    out.drain(..out.len() - cap);
                } else {
                    out.truncate(cap);
                }
            }
        }
        out
    })
}

/// Polls for exit without reaping, so the process group id stays reserved
/// until the group has been killed.
fn exited_unreaped(pid: u32) -> bool {
    let mut info: libc::siginfo_t = unsafe { std::mem::zeroed() };
    // SAFETY: `info` is a valid out-pointer; WNOWAIT leaves the child waitable.
    let rc = unsafe { libc::waitid(libc::P_PID, pid, &mut info, libc::WEXITED | libc::WNOHANG | libc::WNOWAIT) };
    // SAFETY: si_pid is populated when waitid reports a state change.
    rc == 0 && unsafe { info.si_pid() } != 0
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall; the group id equals the unreaped child's pid.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

fn wait_with_deadline(child: &mut Child, deadline: Instant) -> (Option<ExitStatus>, bool) {
    let pid = child.id();
    loop {
        if exited_unreaped(pid) {
            kill_group(pid);
            return (child.wait().ok(), false);
        }
        if Instant::now() >= deadline {
            kill_group(pid);
            return (child.wait().ok(), true);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// Spawns `exec_prefix ++ payload_argv` and collects the last sample line.
pub fn run_payload(
    env: &EnvironmentSpec,
    payload_argv: &[String],
    sampling_interval_ms: Option<u64>,
    timeout_s: f64,
    repetition: u32,
) -> RunRecord {
    let argv: Vec<String> = env.exec_prefix.iter().chain(payload_argv).cloned().collect();
    let start_unix_s = unix_now();
    let t0 = Instant::now();
    let mut record = RunRecord {
        env_id: env.id.clone(),
        baseline: env.is_baseline,
        workload: None,
        argv: argv.clone(),
        repetition,
        sample: None,
        extra_samples: Vec::new(),
        start_unix_s,
        end_unix_s: start_unix_s,
        status: RunStatus::SpawnFailure,
        exit_code: None,
        diagnostics: String::new(),
        resources: None,
    };
    let Some(program) = argv.first() else {
        record.diagnostics = "empty command line".into();
        return record;
    };

    let mut cmd = Command::new(program);
    cmd.args(&argv[1..])
        .envs(&env.extra_env)
        .env("ENVBENCH_ENV", &env.id)
        .env("ENVBENCH_REPETITION", repetition.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(dir) = &env.workdir {
        cmd.current_dir(dir);
    }
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            record.diagnostics = format!("cannot spawn '{program}': {e}");
            record.end_unix_s = start_unix_s + t0.elapsed().as_secs_f64();
            return record;
        }
    };
    let out = reader(child.stdout.take().expect("piped stdout"), STDOUT_CAP, false);
    let err = reader(child.stderr.take().expect("piped stderr"), STDERR_TAIL, true);
    let sampler = sampling_interval_ms.map(|ms| Sampler::start(child.id(), ms, t0));

    let deadline = t0 + Duration::from_secs_f64(timeout_s.clamp(0.001, 1e9));
    let (status, timed_out) = wait_with_deadline(&mut child, deadline);
    record.resources = sampler.map(Sampler::finish);
    let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
    record.end_unix_s = start_unix_s + t0.elapsed().as_secs_f64();
    record.diagnostics = stderr;
    record.exit_code = status.and_then(|s| s.code());

    if timed_out {
        record.status = RunStatus::Timeout;
        record.diagnostics.push_str(&format!("\nkilled after {timeout_s} s timeout"));
        return record;
    }
    match status {
        Some(s) if s.success() => {
            let mut samples = Sample::all_in(&stdout);
            match samples.pop() {
                Some(last) => {
                    record.sample = Some(last);
                    record.extra_samples = samples;
                    record.status = RunStatus::Success;
                }
                None => {
                    record.status = RunStatus::SampleParseFailure;
                    record.diagnostics.push_str("\nexit 0 but no sample line on standard output");
                }
            }
        }
        Some(s) => {
            record.status = RunStatus::Failed;
            if let Some(sig) = s.signal() {
                record.diagnostics.push_str(&format!("\nkilled by signal {sig}"));
            }
        }
        None => {
            warn!("lost track of payload {program}");
            record.status = RunStatus::Failed;
        }
    }
    record
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn identity_env_reads_last_line() {
        let env = EnvironmentSpec::bare("bare");
        let line = r#"{"metric":"x","value":2.5,"unit":"seconds","polarity":"lower_better","elapsed_s":2.5,"bytes_processed":null,"meta":{}}"#;
        let r = run_payload(&env, &sh(&format!("echo noise; echo '{line}'")), None, 10.0, 0);
        assert_eq!(r.status, RunStatus::Success);
        assert_eq!(r.sample.as_ref().unwrap().value, 2.5);
        assert!(r.end_unix_s >= r.start_unix_s);
    }

    #[test]
    fn exit_code_preserved() {
        let r = run_payload(&EnvironmentSpec::bare("bare"), &sh("echo oops >&2; exit 3"), None, 10.0, 0);
        assert_eq!(r.status, RunStatus::Failed);
        assert_eq!(r.exit_code, Some(3));
        assert!(r.sample.is_none());
        assert!(r.diagnostics.contains("oops"));
    }

    #[test]
    fn no_sample_line() {
        let r = run_payload(&EnvironmentSpec::bare("bare"), &sh("echo hello"), None, 10.0, 0);
        assert_eq!(r.status, RunStatus::SampleParseFailure);
    }

    #[test]
    fn spawn_failure() {
        let r = run_payload(&EnvironmentSpec::bare("bare"), &["/nonexistent/payload".into()], None, 10.0, 0);
        assert_eq!(r.status, RunStatus::SpawnFailure);
        assert!(r.diagnostics.contains("/nonexistent/payload"));
    }

    #[test]
    fn timeout_kills_group() {
        let t = Instant::now();
        let r = run_payload(&EnvironmentSpec::bare("bare"), &sh("sleep 30 & sleep 30"), None, 0.3, 0);
        assert_eq!(r.status, RunStatus::Timeout);
        assert!(t.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn repetition_env_var() {
        let script = r#"printf '{"metric":"r","value":%s,"unit":"seconds","polarity":"lower_better","elapsed_s":1,"meta":{}}\n' "$ENVBENCH_REPETITION""#;
        let r = run_payload(&EnvironmentSpec::bare("bare"), &sh(script), None, 10.0, 7);
        assert_eq!(r.sample.unwrap().value, 7.0);
    }
}
