//! Host side of the code sandbox.
//!
//! Each [`Session`] owns a private working directory and one guest process
//! that keeps a persistent namespace. Executions are atomic: a failed or
//! timed-out snippet leaves the namespace as it was after the last successful
//! one, which the host restores by resetting (or respawning) the guest and
//! replaying the success log.

pub mod protocol;
mod session;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use session::{open_session, Session, SessionState};

pub const DEFAULT_TIMEOUT_SECONDS: f64 = 15.0;
pub const DEFAULT_MAX_ARTIFACT_BYTES: u64 = 16 * 1024 * 1024;
/// Extra time the host allows beyond the per-call limit before it has
/// certainly returned control.
pub const SUPERVISION_SLACK_SECONDS: f64 = 2.0;

/// Blocking input and direct process termination.
pub fn default_disabled_apis() -> Vec<String> {
    [
        "input",
        "raw_input",
        "sys.stdin.read",
        "sys.stdin.readline",
        "exit",
        "quit",
        "sys.exit",
        "os._exit",
        "os.abort",
        "os.kill",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

fn default_guest_command() -> Vec<String> {
    vec![
        "python3".into(),
        "-u".into(),
        "-m".into(),
        "toolloop_guest".into(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub timeout_seconds: f64,
    pub workdir_root: PathBuf,
    pub max_artifact_bytes: u64,
    pub disabled_api_list: Vec<String>,
    /// Program and arguments that start a guest runner speaking the wire
    /// protocol on stdio.
    pub guest_command: Vec<String>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            timeout_seconds: DEFAULT_TIMEOUT_SECONDS,
            workdir_root: std::env::temp_dir(),
            max_artifact_bytes: DEFAULT_MAX_ARTIFACT_BYTES,
            disabled_api_list: default_disabled_apis(),
            guest_command: default_guest_command(),
        }
    }
}

impl SandboxConfig {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) {
            return Err(SandboxError::InvalidConfig(format!(
                "timeout_seconds must be positive, got {}",
                self.timeout_seconds
            )));
        }
        if self.max_artifact_bytes == 0 {
            return Err(SandboxError::InvalidConfig(
                "max_artifact_bytes must be positive".into(),
            ));
        }
        if self.guest_command.is_empty() {
            return Err(SandboxError::InvalidConfig("guest_command is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

impl ExecStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::Error => "error",
            ExecStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    /// Paths relative to the session workdir.
    pub artifacts: Vec<PathBuf>,
    pub duration_seconds: f64,
    /// Names the snippet newly bound, when the guest reports them.
    #[serde(default)]
    pub new_names: Option<Vec<String>>,
}

impl ExecResult {
    pub fn new(status: ExecStatus, stdout: impl Into<String>, stderr: impl Into<String>) -> Self {
        ExecResult {
            status,
            stdout: stdout.into(),
            stderr: stderr.into(),
            artifacts: Vec::new(),
            duration_seconds: 0.0,
            new_names: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("invalid sandbox config: {0}")]
    InvalidConfig(String),
    #[error("could not create session workdir under {root}: {source}")]
    WorkdirCreationFailure {
        root: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not start guest runner: {0}")]
    GuestSpawnFailure(String),
    #[error("guest protocol violation: {0}")]
    Protocol(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("another execution is already in flight on this session")]
    ConcurrentExecution,
    #[error("replaying the success log diverged at snippet {index}: {detail}")]
    ReplayDiverged { index: usize, detail: String },
    #[error("sandbox i/o: {0}")]
    Io(#[from] std::io::Error),
}
