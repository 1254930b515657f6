use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use toolloop_core::sandbox::{open_session, ExecStatus, SandboxConfig, SandboxError, SessionState};

fn cfg(root: &Path, flags: &[&str]) -> SandboxConfig {
    let mut guest_command = vec![env!("CARGO_BIN_EXE_toolloop-mock-guest").to_string()];
    guest_command.extend(flags.iter().map(|f| f.to_string()));
    SandboxConfig {
        workdir_root: root.to_path_buf(),
        guest_command,
        ..SandboxConfig::default()
    }
}

#[test]
fn variables_persist_between_calls() {
    let root = tempfile::tempdir().unwrap();
    let s = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    assert_eq!(s.execute("x = 3").unwrap().status, ExecStatus::Ok);
    let r = s.execute("print(x)").unwrap();
    assert_eq!((r.status, r.stdout.as_str()), (ExecStatus::Ok, "3\n"));
    assert_eq!(s.success_log(), vec!["x = 3", "print(x)"]);
}

#[test]
fn error_reverts_partial_updates() {
    let root = tempfile::tempdir().unwrap();
    let s = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    s.execute("x=3").unwrap();
    let failed = s.execute("x=5; raise").unwrap();
    assert_eq!(failed.status, ExecStatus::Error);
    assert!(!failed.stderr.is_empty());
    assert_eq!(s.execute("print(x)").unwrap().stdout, "3\n");
    assert_eq!(s.success_log(), vec!["x=3", "print(x)"]);
}

#[test]
fn revert_matches_fresh_replay_of_success_log() {
    let root = tempfile::tempdir().unwrap();
    let c = SandboxConfig {
        timeout_seconds: 0.5,
        ..cfg(root.path(), &[])
    };
    let s = open_session(&c, &[]).unwrap();
    let script = [
        "a = 1",
        "b = a + 1; raise",
        "c = 10",
        "a = 100; sleep(2)",
        "b = a * 7",
        "d = undefined_name",
        "a = a + c",
    ];
    for snippet in script {
        s.execute(snippet).unwrap();
    }
    let probe = "print(a, b, c)";
    let observed = s.execute(probe).unwrap();

    let fresh = open_session(&c, &[]).unwrap();
    for snippet in s.success_log().iter().filter(|x| x.as_str() != probe) {
        assert_eq!(fresh.execute(snippet).unwrap().status, ExecStatus::Ok);
    }
    let oracle = fresh.execute(probe).unwrap();
    assert_eq!(observed.stdout, oracle.stdout);
    assert_eq!(observed.stdout, "11 7 10\n");
}

#[test]
fn timeout_is_bounded_and_state_survives() {
    let root = tempfile::tempdir().unwrap();
    let c = SandboxConfig {
        timeout_seconds: 0.5,
        ..cfg(root.path(), &[])
    };
    let s = open_session(&c, &[]).unwrap();
    s.execute("x = 42").unwrap();
    let started = Instant::now();
    let r = s.execute("x = 0; sleep(20)").unwrap();
    let waited = started.elapsed().as_secs_f64();
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(r.duration_seconds >= c.timeout_seconds);
    assert!(waited < c.timeout_seconds + 2.0, "blocked {waited}s");
    assert_eq!(s.execute("print(x)").unwrap().stdout, "42\n");
}

#[test]
fn stalled_guest_times_out_within_slack() {
    let root = tempfile::tempdir().unwrap();
    let c = SandboxConfig {
        timeout_seconds: 1.0,
        ..cfg(root.path(), &["--stall"])
    };
    let s = open_session(&c, &[]).unwrap();
    let started = Instant::now();
    let r = s.execute("print(1)").unwrap();
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(started.elapsed().as_secs_f64() < 3.0);
}

#[test]
fn images_are_copied_into_a_private_workdir() {
    let root = tempfile::tempdir().unwrap();
    let src = tempfile::tempdir().unwrap();
    let img = src.path().join("chart.png");
    std::fs::write(&img, b"\x89PNG fake").unwrap();

    let s = open_session(&cfg(root.path(), &[]), std::slice::from_ref(&img)).unwrap();
    let names: Vec<_> = std::fs::read_dir(s.workdir())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, vec![std::ffi::OsString::from("chart.png")]);
    assert_eq!(
        std::fs::read(s.workdir().join("chart.png")).unwrap(),
        b"\x89PNG fake"
    );

    let empty = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    assert_eq!(std::fs::read_dir(empty.workdir()).unwrap().count(), 0);
    assert_ne!(s.workdir(), empty.workdir());
}

#[test]
fn concurrent_sessions_are_isolated() {
    let root = tempfile::tempdir().unwrap();
    let a = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    let b = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    a.execute("secret = 7; save_artifact(\"a.txt\", \"hello\")")
        .unwrap();
    let listing = b.execute("print(listdir())").unwrap();
    assert_eq!(listing.stdout, "[]\n");
    let lookup = b.execute("print(secret)").unwrap();
    assert_eq!(lookup.status, ExecStatus::Error);
    assert!(lookup.stderr.contains("NameError"));
}

#[test]
fn artifacts_are_relative_and_resolve_inside_workdir() {
    let root = tempfile::tempdir().unwrap();
    let s = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    let r = s
        .execute("save_artifact(\"crop_001.png\", \"px\")")
        .unwrap();
    assert_eq!(r.status, ExecStatus::Ok);
    assert_eq!(r.artifacts, vec![PathBuf::from("crop_001.png")]);
    let abs = s.artifact_path(&r.artifacts[0]);
    assert!(abs.starts_with(s.workdir()) && abs.is_file());

    let escaped = s
        .execute("save_artifact(\"../escape.txt\", \"x\")")
        .unwrap();
    assert_eq!(escaped.status, ExecStatus::Error);
    assert!(escaped.stderr.contains("ArtifactError"));
    assert!(escaped.artifacts.is_empty());
}

#[test]
fn oversized_artifact_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let c = SandboxConfig {
        max_artifact_bytes: 4,
        ..cfg(root.path(), &[])
    };
    let s = open_session(&c, &[]).unwrap();
    let r = s
        .execute("save_artifact(\"big.txt\", \"0123456789\")")
        .unwrap();
    assert_eq!(r.status, ExecStatus::Error);
    assert!(r.stderr.contains("limit is 4"), "{}", r.stderr);
    assert!(s.success_log().is_empty());
}

#[test]
fn disabled_api_is_reported() {
    let root = tempfile::tempdir().unwrap();
    let s = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    let r = s.execute("x = input(\"name? \")").unwrap();
    assert_eq!(r.status, ExecStatus::Error);
    assert!(r.stderr.contains("input"), "{}", r.stderr);
}

#[test]
fn close_is_idempotent_and_final() {
    let root = tempfile::tempdir().unwrap();
    let s = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    let dir = s.workdir().to_path_buf();
    assert!(dir.is_dir());
    s.close();
    assert!(!dir.exists());
    assert_eq!(s.state(), SessionState::Closed);
    s.close();
    assert!(matches!(
        s.execute("print(1)"),
        Err(SandboxError::SessionClosed)
    ));
}

#[test]
fn second_in_flight_call_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let s = Arc::new(open_session(&cfg(root.path(), &[]), &[]).unwrap());
    let worker = {
        let s = Arc::clone(&s);
        std::thread::spawn(move || s.execute("sleep(1)").unwrap())
    };
    std::thread::sleep(Duration::from_millis(200));
    assert!(matches!(
        s.execute("print(1)"),
        Err(SandboxError::ConcurrentExecution)
    ));
    assert_eq!(worker.join().unwrap().status, ExecStatus::Ok);
    assert_eq!(s.execute("print(1)").unwrap().status, ExecStatus::Ok);
}

#[test]
fn unwritable_root_fails_workdir_creation() {
    let root = tempfile::tempdir().unwrap();
    let file = root.path().join("not-a-dir");
    std::fs::write(&file, "").unwrap();
    let err = open_session(&cfg(&file, &[]), &[]).unwrap_err();
    assert!(
        matches!(err, SandboxError::WorkdirCreationFailure { .. }),
        "{err}"
    );
}

#[test]
fn spawn_and_handshake_failures() {
    let root = tempfile::tempdir().unwrap();
    let c = SandboxConfig {
        guest_command: vec!["/nonexistent/guest".into()],
        ..cfg(root.path(), &[])
    };
    assert!(matches!(
        open_session(&c, &[]),
        Err(SandboxError::GuestSpawnFailure(_))
    ));

    let err = open_session(&cfg(root.path(), &["--proto", "2"]), &[]).unwrap_err();
    match err {
        SandboxError::GuestSpawnFailure(msg) => assert!(msg.contains("protocol 2"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
    // Failed opens leave nothing behind.
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn wrong_id_is_a_protocol_error_and_extra_fields_are_ignored() {
    let root = tempfile::tempdir().unwrap();
    // The handshake ping already checks the echo.
    let err = open_session(&cfg(root.path(), &["--wrong-id"]), &[]).unwrap_err();
    assert!(matches!(err, SandboxError::GuestSpawnFailure(_)), "{err}");

    let s = open_session(&cfg(root.path(), &["--extra-fields"]), &[]).unwrap();
    assert_eq!(s.execute("print(2+2)").unwrap().stdout, "4\n");
}

#[test]
fn namespace_deltas_are_optional() {
    let root = tempfile::tempdir().unwrap();
    let with = open_session(&cfg(root.path(), &[]), &[]).unwrap();
    assert_eq!(
        with.execute("y = 1").unwrap().new_names,
        Some(vec!["y".to_string()])
    );
    let without = open_session(&cfg(root.path(), &["--no-deltas"]), &[]).unwrap();
    assert_eq!(without.execute("y = 1").unwrap().new_names, None);
}
