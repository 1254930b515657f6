use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use tracing::{debug, warn};

use super::protocol::{encode, Handshake, Request, Response, WireStatus, PROTOCOL_VERSION};
use super::{ExecResult, ExecStatus, SandboxConfig, SandboxError};

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
const CONTROL_TIMEOUT: Duration = Duration::from_secs(10);

enum Reply {
    Line(String),
    TimedOut,
    Closed,
}

struct GuestProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl GuestProcess {
    fn spawn(cfg: &SandboxConfig, workdir: &Path, session_id: &str) -> Result<Self, SandboxError> {
        let (program, args) = cfg
            .guest_command
            .split_first()
            .ok_or_else(|| SandboxError::GuestSpawnFailure("empty guest command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .current_dir(workdir)
            .env("TOOLLOOP_DISABLED_APIS", cfg.disabled_api_list.join(","))
            .env("TOOLLOOP_SESSION_ID", session_id)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SandboxError::GuestSpawnFailure(format!("{program}: {e}")))?;

        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let sid = session_id.to_string();
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                debug!(session = %sid, "guest: {line}");
            }
        });

        let mut guest = GuestProcess {
            child,
            stdin,
            lines: rx,
        };
        if let Err(e) = guest.handshake() {
            guest.kill();
            return Err(e);
        }
        Ok(guest)
    }

    fn handshake(&mut self) -> Result<(), SandboxError> {
        let line = match self.recv(HANDSHAKE_TIMEOUT) {
            Reply::Line(l) => l,
            Reply::TimedOut => {
                return Err(SandboxError::GuestSpawnFailure(
                    "no handshake from guest".into(),
                ))
            }
            Reply::Closed => {
                return Err(SandboxError::GuestSpawnFailure(
                    "guest exited before handshake".into(),
                ))
            }
        };
        let hs: Handshake = serde_json::from_str(&line).map_err(|e| {
            SandboxError::GuestSpawnFailure(format!("bad handshake line {line:?}: {e}"))
        })?;
        if hs.proto != PROTOCOL_VERSION {
            return Err(SandboxError::GuestSpawnFailure(format!(
                "guest speaks protocol {}, host expects {PROTOCOL_VERSION}",
                hs.proto
            )));
        }
        let ping = Request::Ping {
            id: "handshake".into(),
        };
        let reply = self
            .call(&ping, HANDSHAKE_TIMEOUT)
            .map_err(|e| SandboxError::GuestSpawnFailure(e.to_string()))?;
        match reply {
            Some(r) if r.status == WireStatus::Ok => Ok(()),
            Some(r) => Err(SandboxError::GuestSpawnFailure(format!(
                "ping failed: {}",
                r.stderr
            ))),
            None => Err(SandboxError::GuestSpawnFailure("ping timed out".into())),
        }
    }

    fn recv(&self, timeout: Duration) -> Reply {
        match self.lines.recv_timeout(timeout) {
            Ok(l) => Reply::Line(l),
            Err(RecvTimeoutError::Timeout) => Reply::TimedOut,
            Err(RecvTimeoutError::Disconnected) => Reply::Closed,
        }
    }

    /// Sends one request and waits for its response. `Ok(None)` means the
    /// deadline passed first.
    fn call(&mut self, req: &Request, timeout: Duration) -> Result<Option<Response>, SandboxError> {
        let deadline = Instant::now() + timeout;
        let mut line = encode(req);
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| SandboxError::Protocol(format!("guest stdin closed: {e}")))?;
        let remaining = deadline.saturating_duration_since(Instant::now());
        match self.recv(remaining) {
            Reply::Line(l) => {
                let resp: Response = serde_json::from_str(&l)
                    .map_err(|e| SandboxError::Protocol(format!("bad response {l:?}: {e}")))?;
                if resp.id != req.id() {
                    return Err(SandboxError::Protocol(format!(
                        "response id {:?} does not echo request id {:?}",
                        resp.id,
                        req.id()
                    )));
                }
                Ok(Some(resp))
            }
            Reply::TimedOut => Ok(None),
            Reply::Closed => Err(SandboxError::Protocol("guest closed its stdout".into())),
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for GuestProcess {
    fn drop(&mut self) {
        self.kill();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Restore {
    Clean,
    /// Namespace may hold partial updates; reset and replay.
    Reset,
    /// Guest is gone; start a new one and replay.
    Respawn,
}

struct Inner {
    guest: Option<GuestProcess>,
    success_log: Vec<String>,
    state: SessionState,
    restore: Restore,
    seq: u64,
}

/// One isolated execution instance: a private workdir plus a guest process.
///
/// Executions are serial. A second `execute` call while one is running gets
/// [`SandboxError::ConcurrentExecution`] instead of queueing.
pub struct Session {
    id: String,
    workdir: PathBuf,
    cfg: SandboxConfig,
    busy: AtomicBool,
    inner: Mutex<Inner>,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

/// Creates a fresh workdir holding copies of `images`, starts a guest in it
/// and completes the protocol handshake.
pub fn open_session(cfg: &SandboxConfig, images: &[PathBuf]) -> Result<Session, SandboxError> {
    cfg.validate()?;
    let id = format!("session-{}", uuid::Uuid::new_v4().simple());
    let workdir = cfg.workdir_root.join(&id);
    fs::create_dir(&workdir).map_err(|source| SandboxError::WorkdirCreationFailure {
        root: cfg.workdir_root.clone(),
        source,
    })?;
    let setup = || -> Result<GuestProcess, SandboxError> {
        for img in images {
            let name = img.file_name().ok_or_else(|| {
                SandboxError::InvalidConfig(format!(
                    "image path {} has no file name",
                    img.display()
                ))
            })?;
            fs::copy(img, workdir.join(name))?;
        }
        GuestProcess::spawn(cfg, &workdir, &id)
    };
    match setup() {
        Ok(guest) => Ok(Session {
            id,
            workdir,
            cfg: cfg.clone(),
            busy: AtomicBool::new(false),
            inner: Mutex::new(Inner {
                guest: Some(guest),
                success_log: Vec::new(),
                state: SessionState::Open,
                restore: Restore::Clean,
                seq: 0,
            }),
        }),
        Err(e) => {
            let _ = fs::remove_dir_all(&workdir);
            Err(e)
        }
    }
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.cfg
    }

    pub fn state(&self) -> SessionState {
        self.lock().state
    }

    pub fn success_log(&self) -> Vec<String> {
        self.lock().success_log.clone()
    }

    /// Absolute location of an artifact path returned by [`Session::execute`].
    pub fn artifact_path(&self, rel: &Path) -> PathBuf {
        self.workdir.join(rel)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.cfg.timeout_seconds)
    }

    pub fn execute(&self, snippet: &str) -> Result<ExecResult, SandboxError> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(SandboxError::ConcurrentExecution);
        }
        let _guard = BusyGuard(&self.busy);
        let mut inner = self.lock();
        if inner.state == SessionState::Closed {
            return Err(SandboxError::SessionClosed);
        }
        self.restore(&mut inner)?;

        inner.seq += 1;
        let req = Request::Exec {
            id: format!("{}-{}", self.id, inner.seq),
            snippet: snippet.to_string(),
        };
        let timeout = self.timeout();
        let started = Instant::now();
        let guest = inner.guest.as_mut().expect("restored session has a guest");
        let reply = guest.call(&req, timeout);
        let elapsed = started.elapsed().as_secs_f64();

        let result = match reply {
            Ok(Some(resp)) => {
                let mut result = ExecResult {
                    status: match resp.status {
                        WireStatus::Ok => ExecStatus::Ok,
                        WireStatus::Error => ExecStatus::Error,
                    },
                    stdout: resp.stdout,
                    stderr: resp.stderr,
                    artifacts: Vec::new(),
                    duration_seconds: elapsed,
                    new_names: resp.new_names,
                };
                if let Err(msg) = self.check_artifacts(&resp.artifacts, &mut result.artifacts) {
                    result.status = ExecStatus::Error;
                    if !result.stderr.is_empty() && !result.stderr.ends_with('\n') {
                        result.stderr.push('\n');
                    }
                    result.stderr.push_str(&msg);
                }
                if result.status == ExecStatus::Ok {
                    inner.success_log.push(snippet.to_string());
                } else {
                    inner.restore = Restore::Reset;
                }
                result
            }
            Ok(None) => {
                warn!(session = %self.id, "execution exceeded {:.3}s, killing guest", self.cfg.timeout_seconds);
                if let Some(mut g) = inner.guest.take() {
                    g.kill();
                }
                inner.restore = Restore::Respawn;
                let mut r = ExecResult::new(
                    ExecStatus::Timeout,
                    "",
                    format!(
                        "TimeoutError: execution exceeded {} s wall-clock limit",
                        self.cfg.timeout_seconds
                    ),
                );
                r.duration_seconds = elapsed.max(self.cfg.timeout_seconds);
                r
            }
            Err(e) => {
                // A guest that breaks protocol or dies is replaced before the
                // next call.
                if let Some(mut g) = inner.guest.take() {
                    g.kill();
                }
                inner.restore = Restore::Respawn;
                match e {
                    SandboxError::Protocol(_) => return Err(e),
                    other => {
                        let mut r = ExecResult::new(ExecStatus::Error, "", other.to_string());
                        r.duration_seconds = elapsed;
                        r
                    }
                }
            }
        };
        Ok(result)
    }

    /// Brings the guest namespace back to the state after the last successful
    /// snippet.
    fn restore(&self, inner: &mut Inner) -> Result<(), SandboxError> {
        match inner.restore {
            Restore::Clean => return Ok(()),
            Restore::Reset => {
                inner.seq += 1;
                let req = Request::Reset {
                    id: format!("{}-{}", self.id, inner.seq),
                };
                let guest = inner.guest.as_mut().expect("reset needs a live guest");
                match guest.call(&req, CONTROL_TIMEOUT) {
                    Ok(Some(r)) if r.status == WireStatus::Ok => {}
                    _ => {
                        if let Some(mut g) = inner.guest.take() {
                            g.kill();
                        }
                    }
                }
            }
            Restore::Respawn => {
                if let Some(mut g) = inner.guest.take() {
                    g.kill();
                }
            }
        }
        if inner.guest.is_none() {
            inner.guest = Some(GuestProcess::spawn(&self.cfg, &self.workdir, &self.id)?);
        }
        let timeout = self.timeout();
        let log = inner.success_log.clone();
        for (index, snippet) in log.iter().enumerate() {
            inner.seq += 1;
            let req = Request::Exec {
                id: format!("{}-{}", self.id, inner.seq),
                snippet: snippet.clone(),
            };
            let guest = inner.guest.as_mut().expect("guest present");
            let detail = match guest.call(&req, timeout) {
                Ok(Some(r)) if r.status == WireStatus::Ok => continue,
                Ok(Some(r)) => r.stderr,
                Ok(None) => "timed out during replay".to_string(),
                Err(e) => e.to_string(),
            };
            inner.guest = None;
            inner.restore = Restore::Respawn;
            return Err(SandboxError::ReplayDiverged { index, detail });
        }
        inner.restore = Restore::Clean;
        Ok(())
    }

    fn check_artifacts(&self, reported: &[String], out: &mut Vec<PathBuf>) -> Result<(), String> {
        let root = fs::canonicalize(&self.workdir).map_err(|e| e.to_string())?;
        for rel in reported {
            let resolved = fs::canonicalize(self.workdir.join(rel))
                .map_err(|e| format!("ArtifactError: {rel}: {e}"))?;
            if !resolved.starts_with(&root) || !resolved.is_file() {
                return Err(format!(
                    "ArtifactError: {rel} is not a file inside the session workdir"
                ));
            }
            let size = fs::metadata(&resolved).map_err(|e| e.to_string())?.len();
            if size > self.cfg.max_artifact_bytes {
                return Err(format!(
                    "ArtifactError: {rel} is {size} bytes, limit is {}",
                    self.cfg.max_artifact_bytes
                ));
            }
            let relative = resolved
                .strip_prefix(&root)
                .expect("checked prefix")
                .to_path_buf();
            out.push(relative);
        }
        Ok(())
    }

    /// Terminates the guest and removes the workdir. Safe to call repeatedly.
    pub fn close(&self) {
        let mut inner = self.lock();
        if inner.state == SessionState::Closed {
            return;
        }
        inner.state = SessionState::Closed;
        if let Some(mut g) = inner.guest.take() {
            g.kill();
        }
        if let Err(e) = fs::remove_dir_all(&self.workdir) {
            warn!(session = %self.id, "failed to remove workdir: {e}");
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("workdir", &self.workdir)
            .finish_non_exhaustive()
    }
}
