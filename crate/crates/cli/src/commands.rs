use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde_json::json;
use thiserror::Error;
use tracing::info;

use toolloop_core::analytics::{
    aggregate_metrics, detect_vacuous, entropy_records, metrics_csv, metrics_for_run_dir,
    sidecar_path, AnalyticsError, ENTROPY_FILE, METRICS_FILE, TRAJECTORIES_FILE,
};
use toolloop_core::config::{ConfigError, HarnessConfig};
use toolloop_core::mock_guest::{serve, MockOptions};
use toolloop_core::persist::{
    read_trajectories, to_jsonl, write_atomic, write_trajectories, PersistError,
};
use toolloop_core::reward::{difficulty_scale, sign_threshold, RewardConfig, RewardError};
use toolloop_core::scoring::{
    flatten_trajectories, group_by_query, score_batch, sidecar_records, ScoringError,
};
use toolloop_core::sim::{
    manifest_to_jsonl, read_manifest, run_suite, synthetic_suite, GroupSettings, PolicyOptions,
    RolloutError,
};

use crate::{DetectArgs, ExportArgs, GenTasksArgs, ScoreArgs, SimulateArgs, SweepArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{flag}: {msg}")]
    Usage { flag: &'static str, msg: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Rollout(RolloutError::SandboxFailure { .. }) => 4,
            _ => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            4 => "sandbox",
            _ => "input",
        }
    }

    pub fn json_line(&self) -> String {
        let mut line = json!({"error": self.kind(), "message": self.to_string()});
        if let CliError::Usage { flag, .. } = self {
            line["flag"] = json!(flag);
        }
        line.to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads the config (or defaults), applies the workdir override and points
/// the sandbox at the built-in guest unless one is configured.
fn load_config(path: Option<&Path>) -> Result<HarnessConfig, CliError> {
    let mut cfg = match path {
        Some(p) => HarnessConfig::load(p)?,
        None => {
            let mut c = HarnessConfig::default();
            c.apply_env();
            c
        }
    };
    if !cfg.guest_command_explicit {
        let exe = std::env::current_exe().map_err(io_err(Path::new("current executable")))?;
        cfg.sandbox.guest_command = vec![exe.to_string_lossy().into_owned(), "mock-guest".into()];
    }
    Ok(cfg)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(g) = a.group_size {
        cfg.group_size = g;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.max_turns == Some(0) {
        return Err(CliError::Usage {
            flag: "--max-turns",
            msg: "must be at least 1".into(),
        });
    }
    cfg.validate()?;
    let max_turns = match (a.max_turns, a.eval) {
        (Some(m), _) => m,
        (None, true) => cfg.max_turns_eval,
        (None, false) => cfg.max_turns_train,
    };
    let tasks = read_manifest(&a.tasks)?;
    if tasks.is_empty() {
        return Err(CliError::Usage {
            flag: "--tasks",
            msg: format!("{} holds no tasks", a.tasks.display()),
        });
    }
    let opts = PolicyOptions {
        spam_snippet: a.spam_snippet,
        replay: match &a.replay {
            Some(p) => read_trajectories(p, cfg.advantage.segmenter)?,
            None => Vec::new(),
        },
    };
    let settings = GroupSettings {
        sandbox: cfg.sandbox.clone(),
        reward: cfg.reward.clone(),
        advantage: cfg.advantage.clone(),
        max_turns,
    };
    info!(tasks = tasks.len(), policy = %a.policy, max_turns, "simulating");
    let (batches, entropies) =
        run_suite(a.policy, &tasks, cfg.group_size, cfg.seed, &opts, &settings)?;
    let metrics = aggregate_metrics(&batches, &entropies)?;

    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let traj_path = a.out.join(TRAJECTORIES_FILE);
    write_trajectories(&traj_path, &flatten_trajectories(&batches))?;
    write_atomic(
        &sidecar_path(&traj_path),
        &to_jsonl(&sidecar_records(&batches)),
    )?;
    write_atomic(
        &a.out.join(ENTROPY_FILE),
        &to_jsonl(&entropy_records(&entropies)),
    )?;
    write_atomic(&a.out.join(METRICS_FILE), &metrics_csv(&[(0, metrics)]))?;
    println!("{}", a.out.display());
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.reward.validate().map_err(ConfigError::from)?;
    let trajs = read_trajectories(&a.trajectories, cfg.advantage.segmenter)?;
    let batches = score_batch(group_by_query(trajs), &cfg.reward, &cfg.advantage)?;
    let out = a.out.unwrap_or_else(|| sidecar_path(&a.trajectories));
    write_atomic(&out, &to_jsonl(&sidecar_records(&batches)))?;
    println!("{}", out.display());
    Ok(())
}

pub fn sweep_d(a: SweepArgs) -> Result<(), CliError> {
    if a.steps < 2 {
        return Err(CliError::Usage {
            flag: "--steps",
            msg: format!("need at least 2 points, got {}", a.steps),
        });
    }
    let cfg = RewardConfig {
        gamma: a.gamma,
        delta: a.delta,
        ..RewardConfig::default()
    };
    let usage = |flag, e: RewardError| CliError::Usage {
        flag,
        msg: e.to_string(),
    };
    let threshold = sign_threshold(&cfg).map_err(|e| usage("--delta", e))?;
    let mut out = String::from("mu_acc,d\n");
    for i in 0..a.steps {
        let mu = i as f64 / (a.steps - 1) as f64;
        let d = difficulty_scale(mu, &cfg).map_err(|e| usage("--gamma", e))?;
        let _ = writeln!(out, "{mu},{d}");
    }
    let _ = writeln!(out, "threshold,{threshold}");
    print!("{out}");
    Ok(())
}

pub fn detect_hacking(a: DetectArgs) -> Result<(), CliError> {
    let trajs = read_trajectories(&a.trajectories, Default::default())?;
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let mut flagged = 0;
    for (i, t) in trajs.iter().enumerate() {
        for flag in detect_vacuous(i, t) {
            flagged += 1;
            let line = serde_json::to_string(&flag).expect("flag serializes");
            writeln!(w, "{line}").map_err(io_err(Path::new("stdout")))?;
        }
    }
    w.flush().map_err(io_err(Path::new("stdout")))?;
    info!(trajectories = trajs.len(), flagged, "detection finished");
    Ok(())
}

/// Run directories under `root`: `root` itself if it holds a trajectory
/// file, otherwise its subdirectories that do, sorted by name.
fn run_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join(TRAJECTORIES_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TRAJECTORIES_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage {
            flag: "--runs",
            msg: format!("no {TRAJECTORIES_FILE} under {}", root.display()),
        });
    }
    Ok(dirs)
}

pub fn export(a: ExportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (step, dir) in run_dirs(&a.runs)?.into_iter().enumerate() {
        rows.push((step, metrics_for_run_dir(&dir, Default::default())?));
    }
    write_atomic(&a.out, &metrics_csv(&rows))?;
    println!("{}", a.out.display());
    Ok(())
}

pub fn gen_tasks(a: GenTasksArgs) -> Result<(), CliError> {
    let tasks = synthetic_suite(a.easy, a.hard, a.seed);
    write_atomic(&a.out, &manifest_to_jsonl(&tasks))?;
    println!("{}", a.out.display());
    Ok(())
}

pub fn mock_guest(args: Vec<String>) -> ExitCode {
    let opts = match MockOptions::from_args(args) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("{}", json!({"error": "usage", "message": msg}));
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    match serve(stdin.lock(), io::stdout().lock(), &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(_) => ExitCode::from(3),
    }
}
