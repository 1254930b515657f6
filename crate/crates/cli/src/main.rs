//! `toolloop`: run scripted rollouts, score trajectory files, sweep the
//! difficulty scale, flag vacuous tool calls and export metrics.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use toolloop_core::sim::ScriptedPolicyKind;

#[derive(Debug, Parser)]
#[command(name = "toolloop", version, about = "Tool-integrated rollout harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scripted policy over a task manifest.
    Simulate(SimulateArgs),
    /// Recompute the reward/advantage sidecar of a trajectory file.
    Score(ScoreArgs),
    /// Tabulate the difficulty scale over group accuracy.
    SweepD(SweepArgs),
    /// List tool calls that look like reward hacking.
    DetectHacking(DetectArgs),
    /// Aggregate run directories into one metrics table.
    Export(ExportArgs),
    /// Write the synthetic arithmetic task suite as a manifest.
    GenTasks(GenTasksArgs),
    /// Built-in guest runner used when no guest command is configured.
    #[command(hide = true)]
    MockGuest {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Task manifest, one JSON record per line.
    #[arg(long)]
    tasks: PathBuf,
    /// tool-spammer, tool-avoider, adaptive or replay.
    #[arg(long, value_name = "KIND")]
    policy: ScriptedPolicyKind,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    group_size: Option<usize>,
    /// Overrides the configured training budget.
    #[arg(long)]
    max_turns: Option<usize>,
    /// Use the evaluation turn budget instead of the training one.
    #[arg(long, conflicts_with = "max_turns")]
    eval: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Snippet the tool spammer sends instead of each task's solver.
    #[arg(long)]
    spam_snippet: Option<String>,
    /// Trajectory file to re-emit with the replay policy.
    #[arg(long, required_if_eq("policy", "replay"))]
    replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sidecar path; defaults to `<stem>.rewards.jsonl` next to the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 4.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Number of evenly spaced accuracy points in [0, 1].
    #[arg(long, default_value_t = 11)]
    steps: usize,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    trajectories: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// A run directory, or a directory of run directories (one row each).
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenTasksArgs {
    #[arg(long, default_value_t = 20)]
    easy: usize,
    #[arg(long, default_value_t = 20)]
    hard: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn usage_line(err: &clap::Error) -> String {
    let flag = match err.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        Some(ContextValue::Strings(v)) => v.first().cloned(),
        _ => None,
    };
    let message = err
        .to_string()
        .lines()
        .next()
        .unwrap_or_default()
        .trim_start_matches("error: ")
        .to_string();
    json!({"error": "usage", "flag": flag, "message": message}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", usage_line(&e));
            return ExitCode::from(2);
        }
    };
    if let Command::MockGuest { args } = &cli.command {
        return commands::mock_guest(args.clone());
    }
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Score(a) => commands::score(a),
        Command::SweepD(a) => commands::sweep_d(a),
        Command::DetectHacking(a) => commands::detect_hacking(a),
        Command::Export(a) => commands::export(a),
        Command::GenTasks(a) => commands::gen_tasks(a),
        Command::MockGuest { .. } => unreachable!("handled above"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_policy_names_the_flag() {
        let err = Cli::try_parse_from([
            "toolloop", "simulate", "--tasks", "t", "--policy", "greedy", "--out", "o",
        ])
        .unwrap_err();
        let line: serde_json::Value = serde_json::from_str(&usage_line(&err)).unwrap();
        assert_eq!(line["error"], "usage");
        assert!(line["flag"].as_str().unwrap().starts_with("--policy"));
    }
}
