use std::net::TcpListener;
use std::sync::Mutex;
use std::time::Duration;

use envbench_launchrec::{record_launch, trace_to_records, LaunchEntry, LaunchMode, Outcome, ReadinessProbe};

// timing windows are tight; keep these off each other's CPU
static SERIAL: Mutex<()> = Mutex::new(());

fn entry(id: &str, script: &str, probe: ReadinessProbe) -> LaunchEntry {
    LaunchEntry { id: id.into(), argv: vec!["sh".into(), "-c".into(), script.into()], module: id.into(), probe }
}

/// Alive and not a zombie.
fn alive(pid: u32) -> bool {
    // SAFETY: signal 0 only checks for existence.
    if unsafe { libc::kill(pid as libc::pid_t, 0) } != 0 {
        return false;
    }
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(stat) => stat.rsplit(')').next().and_then(|r| r.split_whitespace().next()) != Some("Z"),
        Err(_) => false,
    }
}

#[test]
fn process_exit_probe_matches_sleep() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let e = LaunchEntry {
        id: "sleeper".into(),
        argv: vec!["sleep".into(), "0.5".into()],
        module: "m".into(),
        probe: ReadinessProbe::ProcessExit { timeout_s: 5.0 },
    };
    let t = record_launch(&[e], LaunchMode::Parallel).unwrap();
    assert_eq!(t[0].outcome, Outcome::Ready);
    assert_eq!(t[0].spawn_t_s, 0.0);
    let d = t[0].ready_t_s.unwrap() - t[0].spawn_t_s;
    assert!((0.5..=0.6).contains(&d), "took {d}");
}

#[test]
fn line_match_probe_matches_script() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let e = entry("printer", "echo booting; sleep 0.2; echo READY; sleep 10", ReadinessProbe::LineMatch {
        pattern: "READY".into(),
        timeout_s: 5.0,
    });
    let t = record_launch(&[e], LaunchMode::Parallel).unwrap();
    let d = t[0].ready_t_s.unwrap();
    assert!((0.2..=0.35).contains(&d), "took {d}");
    assert!(!alive(t[0].pid));
}

#[test]
fn timeout_does_not_abort_trace() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let entries = [
        entry("silent", "sleep 30", ReadinessProbe::LineMatch { pattern: "READY".into(), timeout_s: 0.1 }),
        entry("quick", "true", ReadinessProbe::ProcessExit { timeout_s: 5.0 }),
    ];
    for mode in [LaunchMode::Parallel, LaunchMode::Sequential] {
        let t = record_launch(&entries, mode).unwrap();
        assert_eq!(t[0].outcome, Outcome::Timeout);
        assert_eq!(t[1].outcome, Outcome::Ready);
        assert_eq!(trace_to_records(&t).len(), 1);
        if mode == LaunchMode::Sequential {
            assert!(t[1].spawn_t_s >= 0.1, "{}", t[1].spawn_t_s);
        }
    }
}

#[test]
fn port_probe() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let script = format!("sleep 0.2; exec python3 -c 'import socket,time; s=socket.socket(); s.bind((\"127.0.0.1\",{port})); s.listen(); time.sleep(10)'");
    let e = entry("server", &script, ReadinessProbe::PortOpen { address: format!("127.0.0.1:{port}"), timeout_s: 10.0 });
    let t = record_launch(&[e], LaunchMode::Parallel).unwrap();
    assert_eq!(t[0].outcome, Outcome::Ready);
    assert!(t[0].ready_t_s.unwrap() >= 0.2);
}

#[test]
fn no_process_outlives_the_recording() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let pidfile = dir.path().join("grandchild");
    let script = format!("sleep 60 & echo $! > {}; echo READY; wait", pidfile.display());
    let entries = [
        entry("parent", &script, ReadinessProbe::LineMatch { pattern: "READY".into(), timeout_s: 5.0 }),
        entry("other", "sleep 60", ReadinessProbe::ProcessExit { timeout_s: 0.2 }),
    ];
    let t = record_launch(&entries, LaunchMode::Parallel).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    let grandchild: u32 = std::fs::read_to_string(&pidfile).unwrap().trim().parse().unwrap();
    for pid in t.iter().map(|e| e.pid).chain([grandchild]) {
        assert!(!alive(pid), "pid {pid} survived");
    }
    assert!(t.iter().map(|e| e.spawn_t_s).fold(f64::INFINITY, f64::min) == 0.0);
    for e in &t {
        if let Some(r) = e.ready_t_s {
            assert!(r >= e.spawn_t_s);
        }
    }
}

#[test]
fn spawn_failure_is_an_error() {
    let e = LaunchEntry {
        id: "ghost".into(),
        argv: vec!["/nonexistent/service".into()],
        module: "m".into(),
        probe: ReadinessProbe::ProcessExit { timeout_s: 1.0 },
    };
    let err = record_launch(&[e], LaunchMode::Parallel).unwrap_err();
    assert!(err.to_string().contains("ghost"));
}
