use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Mutex;

use envbench_cli::{Flag, ReportTable};
use envbench_core::stats::{normalize_report, Aggregation};
use envbench_core::{Model, Polarity, Sample, Search, Unit};
use envbench_launchrec::read_records_csv;
use envbench_matrix::read_results;
use proptest::prelude::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn envbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envbench")).args(args).env_remove("ENVBENCH_RESULTS").output().unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).to_string_lossy().into_owned()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn mb_mem_stream_prints_one_sample() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let out = envbench(&["mb", "mem-stream", "--kind", "copy", "--buffer", "64MiB", "--reps", "10", "--runs", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    let s = Sample::parse_line(stdout.trim()).unwrap();
    assert_eq!(s.metric, "mem.copy");
    assert_eq!(s.meta["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(s.meta["buffer_bytes"], 64 << 20);
}

#[test]
fn mb_usage_errors_exit_2() {
    let out = envbench(&["mb", "warp-drive"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("unknown workload kind"));
    assert_eq!(envbench(&["mb"]).status.code(), Some(2));
    // a flag belonging to another workload
    assert_eq!(envbench(&["mb", "cpu-int", "--files", "3"]).status.code(), Some(2));
    assert_eq!(envbench(&["mb", "disk-seq", "--mode", "read", "--sync"]).status.code(), Some(2));
}

#[test]
fn mb_unwritable_dir_exits_1() {
    let out = envbench(&["mb", "disk-churn", "--dir", "/proc/envbench-nope", "--files", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!text(&out.stderr).is_empty());
    assert!(out.stdout.is_empty());
}

fn stub(name: &str, metric: &str, value: f64) -> serde_json::Value {
    let line = Sample::new(metric, value, Unit::OpsPerS, Polarity::HigherBetter, 0.01).to_line();
    serde_json::json!({ "kind": "cpu-int", "name": name, "command": ["sh", "-c", format!("echo '{line}'")] })
}

fn write_config(dir: &Path, config: serde_json::Value) -> PathBuf {
    let path = dir.join("matrix.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn bench_run_exit_codes() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.jsonl");

    let one = write_config(dir.path(), serde_json::json!({
        "environments": [{ "id": "bare", "exec_prefix": [], "is_baseline": true }],
        "workloads": [stub("a", "m", 1.0)],
    }));
    let out = envbench(&["bench", "run", p(&one), "--results", p(&results)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 1);
    assert!(text(&out.stderr).contains("[1/1]"));

    let two_baselines = write_config(dir.path(), serde_json::json!({
        "environments": [
            { "id": "bare", "exec_prefix": [], "is_baseline": true },
            { "id": "other", "exec_prefix": [], "is_baseline": true },
        ],
        "workloads": [stub("a", "m", 1.0)],
    }));
    let out = envbench(&["bench", "run", p(&two_baselines), "--results", p(&results)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("baseline"));
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 1);

    let line = Sample::new("m2", 1.0, Unit::OpsPerS, Polarity::HigherBetter, 0.01).to_line();
    let partial = write_config(dir.path(), serde_json::json!({
        "environments": [
            { "id": "bare", "exec_prefix": [], "is_baseline": true },
            { "id": "wrapped", "exec_prefix": ["/usr/bin/env"] },
        ],
        "workloads": [
            stub("ok", "m", 1.0),
            { "kind": "cpu-int", "name": "flaky", "command": ["sh", "-c", format!("[ \"$ENVBENCH_ENV\" = bare ] || exit 7; echo '{line}'")] },
        ],
    }));
    let fresh = dir.path().join("partial.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_envbench"))
        .args(["bench", "run", p(&partial)])
        .env("ENVBENCH_RESULTS", &fresh)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    let (records, _) = read_results(&fresh).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(records.iter().filter(|r| !r.succeeded()).count(), 1);
}

#[test]
fn bench_run_force_truncates() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.jsonl");
    let cfg = write_config(dir.path(), serde_json::json!({
        "environments": [{ "id": "bare", "exec_prefix": [], "is_baseline": true }],
        "workloads": [stub("a", "m", 1.0)],
    }));
    for _ in 0..2 {
        envbench(&["bench", "run", p(&cfg), "--results", p(&results)]);
    }
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 2);
    envbench(&["bench", "run", p(&cfg), "--results", p(&results), "--force"]);
    assert_eq!(std::fs::read_to_string(&results).unwrap().lines().count(), 1);
}

fn results_file(dir: &Path, rows: &[(&str, bool, &str, f64)]) -> PathBuf {
    let mut body = String::new();
    for (i, (env, baseline, metric, value)) in rows.iter().enumerate() {
        let s = Sample::new(*metric, *value, Unit::MegabytesPerS, Polarity::HigherBetter, 1.0);
        let rec = serde_json::json!({
            "env_id": env, "baseline": baseline, "argv": ["x"], "repetition": i, "sample": s,
            "start_unix_s": i as f64, "end_unix_s": i as f64 + 0.5, "status": "success", "exit_code": 0,
        });
        body.push_str(&format!("{rec}\n"));
    }
    let path = dir.join("results.jsonl");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn report_formats_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let r = results_file(dir.path(), &[("bare", true, "disk", 200.0), ("kvm", false, "disk", 180.0), ("docker", false, "disk", 200.0)]);
    let out = envbench(&["bench", "report", p(&r), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = text(&out.stdout);
    assert!(csv.starts_with("metric,environment,baseline,polarity,n,percent,std_percent,flag\n"));
    assert!(csv.contains("disk,kvm,bare,higher_better,1,90.00,,min"), "{csv}");
    let table = ReportTable::read_csv(csv.as_bytes()).unwrap();
    assert_eq!(table.cell("bare", "disk").unwrap().flag, Flag::Max);

    let out = envbench(&["bench", "report", p(&r), "--format", "table"]);
    let t = text(&out.stdout);
    assert!(t.contains("90.00 v") && t.contains("Percentages compared to the bare reference"), "{t}");
    assert!(t.contains("ratio"));

    let written = dir.path().join("report.csv");
    assert_eq!(envbench(&["bench", "report", p(&r), "--format", "csv", "-o", p(&written)]).status.code(), Some(0));
    assert_eq!(envbench(&["bench", "report", p(&r), "--format", "csv", "-o", p(&written)]).status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(&written).unwrap(), csv);
}

#[test]
fn report_parity_and_missing_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let r = results_file(dir.path(), &[("bare", true, "a", 5.0), ("vm", false, "a", 5.0), ("bare", true, "b", 3.0), ("vm", false, "b", 3.0)]);
    let out = envbench(&["bench", "report", p(&r), "--format", "csv"]);
    let table = ReportTable::read_csv(out.stdout.as_slice()).unwrap();
    assert!(table.cells.iter().all(|c| c.percent == Some(100.0) && c.flag == Flag::None));

    let r = results_file(dir.path(), &[("vm", false, "a", 5.0)]);
    assert_eq!(envbench(&["bench", "report", p(&r)]).status.code(), Some(4));
    assert_eq!(envbench(&["bench", "report", p(&r), "--baseline", "bare"]).status.code(), Some(4));
}

#[test]
fn replay_prints_published_total() {
    let out = envbench(&["launch", "replay", &fixture("bars/bare_amd64.csv")]);
    assert_eq!(text(&out.stdout), "7.318\n");
    assert_eq!(envbench(&["launch", "replay", "/nonexistent.csv"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let args = |out: &Path| {
        envbench(&[
            "launch",
            "simulate",
            &fixture("launch/graph.json"),
            &fixture("launch/plan10.json"),
            &fixture("launch/model_amd64.json"),
            "-o",
            p(out),
        ])
    };
    let first = args(&a);
    assert_eq!(first.status.code(), Some(0), "{}", text(&first.stderr));
    assert_eq!(text(&first.stdout), "total_s 6.879634\n");
    args(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(args(&a).status.code(), Some(2));
    let rows = envbench_core::launchsim::read_timeline_csv::<f64, _>(std::fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(rows.len(), 60);
}

#[test]
fn simulate_rejects_bad_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"{"blocks":[["api.ad_api"]]}"#).unwrap();
    let out = envbench(&["launch", "simulate", &fixture("launch/graph.json"), p(&plan), &fixture("launch/model_amd64.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("not assigned"));
}

#[test]
fn calibrate_emits_model_document() {
    let out = envbench(&["launch", "calibrate", "--points", "1:2.446,10:2.987,17:2.954,26:3.030", "--cores", "24"]);
    assert_eq!(out.status.code(), Some(0));
    let m: Model = serde_json::from_slice(&out.stdout).unwrap();
    assert!((m.ready_intercept_a - 2.566443620178042).abs() < 1e-12);
    assert!((m.ready_slope_b - 0.021318991097922832).abs() < 1e-12);
    assert_eq!(m.core_cap, Some(24));
    assert_eq!(envbench(&["launch", "calibrate", "--points", "5:1.0,5:2.0"]).status.code(), Some(2));
}

#[test]
fn optimize_emits_result_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    std::fs::write(
        &graph,
        serde_json::json!({
            "modules": ["a", "b", "c"],
            "nodes": [
                { "id": "a.d", "module": "a", "kind": "dependent", "duration_s": 2.0 },
                { "id": "a.m", "module": "a", "kind": "main", "duration_s": 1.0 },
                { "id": "b.m", "module": "b", "kind": "main", "duration_s": 2.0 },
                { "id": "c.m", "module": "c", "kind": "main", "duration_s": 1.0 },
            ]
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("best.json");
    let run = envbench(&["launch", "optimize", p(&graph), &fixture("launch/model_amd64.json"), "-o", p(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));
    let result: Search = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(result.evaluated, 5);
    assert!(text(&run.stdout).contains("Exhaustive search"));
    let local = envbench(&["launch", "optimize", p(&graph), &fixture("launch/model_amd64.json"), "--method", "local"]);
    let local: Search = serde_json::from_slice(&local.stdout).unwrap();
    assert!(local.best_total_s >= result.best_total_s);
}

#[test]
fn record_writes_trace_and_records() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(
        &plan,
        serde_json::json!({ "entries": [
            { "id": "ros", "module": "ros", "argv": ["sleep", "0.2"], "probe": { "kind": "process_exit", "timeout_s": 5.0 } },
            { "id": "map", "module": "map", "argv": ["sh", "-c", "sleep 0.1; echo loaded; sleep 5"],
              "probe": { "kind": "line_match", "pattern": "loaded", "timeout_s": 5.0 } },
        ]})
        .to_string(),
    )
    .unwrap();
    let (records, trace) = (dir.path().join("r.csv"), dir.path().join("t.jsonl"));
    let out = envbench(&["launch", "record", p(&plan), "--records", p(&records), "--trace", p(&trace)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let recs = read_records_csv(std::fs::File::open(&records).unwrap()).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 2);
    let replay = envbench(&["launch", "replay", p(&records)]);
    let total: f64 = text(&replay.stdout).trim().parse().unwrap();
    assert!((0.2..0.5).contains(&total), "{total}");
    let again = envbench(&["launch", "record", p(&plan), "--records", p(&records)]);
    assert_eq!(again.status.code(), Some(2));
}

fn polarity() -> impl Strategy<Value = Polarity> {
    prop_oneof![Just(Polarity::HigherBetter), Just(Polarity::LowerBetter), Just(Polarity::RawRatio)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_csv_round_trips(
        cells in prop::collection::vec((0usize..4, 0usize..3, 0.01f64..1e6, polarity()), 1..30),
    ) {
        let envs = ["bare", "kvm", "docker", "podman"];
        let samples: Vec<(usize, Sample)> = cells
            .iter()
            .map(|&(e, m, v, pol)| (e, Sample::new(format!("metric.{m}.{}", pol.as_str()), v, Unit::Seconds, pol, 1.0)))
            .collect();
        let base = Sample::new("metric.0.higher_better", 1.0, Unit::Seconds, Polarity::HigherBetter, 1.0);
        let obs = std::iter::once(("bare", &base)).chain(samples.iter().map(|(e, s)| (envs[*e], s)));
        let table = ReportTable::from_report(&normalize_report(obs, "bare", Aggregation::Mean).unwrap());
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        prop_assert_eq!(ReportTable::read_csv(buf.as_slice()).unwrap(), table);
    }
}
