//! Batch metrics, the vacuous-code detector, and CSV export.
//!
//! Everything here is recomputable from persisted run files: trajectories,
//! their reward sidecar and the policy entropy telemetry.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::count_executable_lines;
use crate::persist::{read_jsonl, read_trajectories, PersistError};
use crate::scoring::{GroupBatch, SidecarRecord};
use crate::trajectory::{Action, TokenSegmenter, Trajectory};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const ENTROPY_FILE: &str = "policy_entropy.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CSV_HEADER: &str =
    "step,accuracy,avg_turns,tool_success_rate,mean_entropy,vacuous_call_rate";
/// Written in the entropy column when no policy exposed a distribution.
pub const NOT_AVAILABLE: &str = "NA";

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("no trajectories to aggregate")]
    EmptyInput,
    #[error("{what}: {got} records for {expected} trajectories")]
    Misaligned {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// Sidecar path for a trajectory file: `runs/x.jsonl` -> `runs/x.rewards.jsonl`.
pub fn sidecar_path(trajectories: &Path) -> PathBuf {
    let stem = trajectories
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trajectories".into());
    trajectories.with_file_name(format!("{stem}.rewards.jsonl"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HackReason {
    /// The snippet has no executable line.
    VacuousCode,
    /// Ok status with no output, no artifacts and no new names.
    NoOpSuccess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HackFlag {
    pub trajectory_id: usize,
    pub turn_index: usize,
    pub reason: HackReason,
}

/// Flags suspicious tool calls. NoOpSuccess needs the guest to report
/// namespace deltas, so it never fires on trajectories reloaded from disk.
pub fn detect_vacuous(trajectory_id: usize, traj: &Trajectory) -> Vec<HackFlag> {
    let mut flags = Vec::new();
    for turn in &traj.turns {
        let Action::ToolCall(snippet) = &turn.action else {
            continue;
        };
        let flag = |reason| HackFlag {
            trajectory_id,
            turn_index: turn.index,
            reason,
        };
        if count_executable_lines(snippet) == 0 {
            flags.push(flag(HackReason::VacuousCode));
        }
        if let Some(exec) = &turn.exec_result {
            let no_new_names = exec.new_names.as_ref().is_some_and(|n| n.is_empty());
            if exec.is_ok() && exec.stdout.is_empty() && exec.artifacts.is_empty() && no_new_names {
                flags.push(flag(HackReason::NoOpSuccess));
            }
        }
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub avg_turns: f64,
    pub tool_success_rate: f64,
    /// Mean action-distribution entropy of the scripted policies; `None`
    /// when no rollout exposed a distribution.
    pub mean_entropy: Option<f64>,
    /// Share of tool calls flagged as vacuous code.
    pub vacuous_call_rate: f64,
}

fn aggregate<'a>(
    rows: impl Iterator<Item = (&'a Trajectory, f64)>,
    entropies: &[Option<f64>],
) -> Result<MetricsReport, AnalyticsError> {
    let (mut n, mut acc, mut turns) = (0usize, 0.0, 0usize);
    let (mut succ, mut calls, mut vacuous) = (0usize, 0usize, 0usize);
    for (traj, r_acc) in rows {
        n += 1;
        acc += r_acc;
        turns += traj.turns.len();
        let stats = traj.tool_call_stats();
        succ += stats.succeeded;
        calls += stats.total;
        vacuous += traj
            .turns
            .iter()
            .filter_map(|t| t.action.snippet())
            .filter(|s| count_executable_lines(s) == 0)
            .count();
    }
    if n == 0 {
        return Err(AnalyticsError::EmptyInput);
    }
    let rate = |k: usize| {
        if calls == 0 {
            0.0
        } else {
            k as f64 / calls as f64
        }
    };
    let exposed: Vec<f64> = entropies.iter().flatten().copied().collect();
    Ok(MetricsReport {
        accuracy: acc / n as f64,
        avg_turns: turns as f64 / n as f64,
        tool_success_rate: rate(succ),
        mean_entropy: (!exposed.is_empty())
            .then(|| exposed.iter().sum::<f64>() / exposed.len() as f64),
        vacuous_call_rate: rate(vacuous),
    })
}

/// Metrics over scored groups, in group order. `entropies` holds one entry
/// per trajectory (or none at all).
pub fn aggregate_metrics(
    batches: &[GroupBatch],
    entropies: &[Option<f64>],
) -> Result<MetricsReport, AnalyticsError> {
    let rows = batches
        .iter()
        .flat_map(|g| g.members.iter().map(|m| (&m.trajectory, m.rewards.r_acc)));
    aggregate(rows, entropies)
}

/// Same metrics from persisted trajectories and their sidecar.
pub fn metrics_from_records(
    trajs: &[Trajectory],
    sidecar: &[SidecarRecord],
    entropies: &[Option<f64>],
) -> Result<MetricsReport, AnalyticsError> {
    if sidecar.len() != trajs.len() {
        return Err(AnalyticsError::Misaligned {
            what: "sidecar",
            got: sidecar.len(),
            expected: trajs.len(),
        });
    }
    aggregate(trajs.iter().zip(sidecar.iter().map(|r| r.r_acc)), entropies)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub trajectory_index: usize,
    pub mean_entropy: Option<f64>,
}

pub fn entropy_records(entropies: &[Option<f64>]) -> Vec<EntropyRecord> {
    entropies
        .iter()
        .enumerate()
        .map(|(i, e)| EntropyRecord {
            trajectory_index: i,
            mean_entropy: *e,
        })
        .collect()
}

/// Recomputes a run directory's metrics from its files. A missing entropy
/// file means no policy telemetry.
pub fn metrics_for_run_dir(
    dir: &Path,
    seg: TokenSegmenter,
) -> Result<MetricsReport, AnalyticsError> {
    let traj_path = dir.join(TRAJECTORIES_FILE);
    let trajs = read_trajectories(&traj_path, seg)?;
    let sidecar: Vec<SidecarRecord> = read_jsonl(&sidecar_path(&traj_path))?;
    let entropy_path = dir.join(ENTROPY_FILE);
    let entropies: Vec<Option<f64>> = if entropy_path.exists() {
        let recs: Vec<EntropyRecord> = read_jsonl(&entropy_path)?;
        if recs.len() != trajs.len() {
            return Err(AnalyticsError::Misaligned {
                what: "entropy telemetry",
                got: recs.len(),
                expected: trajs.len(),
            });
        }
        recs.into_iter().map(|r| r.mean_entropy).collect()
    } else {
        Vec::new()
    };
    metrics_from_records(&trajs, &sidecar, &entropies)
}

/// One CSV row per step with a fixed column order.
pub fn metrics_csv(rows: &[(usize, MetricsReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (step, m) in rows {
        let entropy = m
            .mean_entropy
            .map_or_else(|| NOT_AVAILABLE.to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "{step},{},{},{},{entropy},{}",
            m.accuracy, m.avg_turns, m.tool_success_rate, m.vacuous_call_rate
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{ExecResult, ExecStatus};
    use crate::trajectory::QueryState;

    fn traj(snippets: &[(&str, ExecStatus)], answer: Option<&str>) -> Trajectory {
        let mut t = Trajectory::new(QueryState::new("q", "p").with_gold("1"), 10);
        for (s, st) in snippets {
            t.record_turn(
                "",
                Action::ToolCall(s.to_string()),
                Some(ExecResult::new(*st, "1\n", "")),
            )
            .unwrap();
        }
        if let Some(a) = answer {
            t.record_turn("", Action::Answer(a.into()), None).unwrap();
        }
        t
    }

    #[test]
    fn detector_examples() {
        let t = traj(
            &[
                ("# step 1\n# step 2", ExecStatus::Ok),
                ("print(1)", ExecStatus::Ok),
            ],
            Some("1"),
        );
        assert_eq!(
            detect_vacuous(4, &t),
            vec![HackFlag {
                trajectory_id: 4,
                turn_index: 1,
                reason: HackReason::VacuousCode
            }]
        );
        assert!(detect_vacuous(0, &traj(&[], Some("1"))).is_empty());
    }

    #[test]
    fn noop_success_needs_deltas() {
        let mut t = Trajectory::new(QueryState::new("q", "p"), 4);
        let mut r = ExecResult::new(ExecStatus::Ok, "", "");
        t.record_turn("", Action::ToolCall("x = 1".into()), Some(r.clone()))
            .unwrap();
        assert!(detect_vacuous(0, &t).is_empty());
        r.new_names = Some(vec![]);
        t.record_turn("", Action::ToolCall("x = 1".into()), Some(r))
            .unwrap();
        let flags = detect_vacuous(0, &t);
        assert_eq!(flags.len(), 1);
        assert_eq!(
            (flags[0].turn_index, flags[0].reason),
            (2, HackReason::NoOpSuccess)
        );
    }

    #[test]
    fn metrics_arithmetic() {
        let trajs = [
            traj(&[], Some("1")),
            traj(&[("print(1)", ExecStatus::Ok)], Some("1")),
            traj(&[], Some("0")),
            traj(&[("print(1)", ExecStatus::Error)], Some("0")),
        ];
        let r_acc = [1.0, 1.0, 0.0, 0.0];
        let m = aggregate(trajs.iter().zip(r_acc), &[]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.avg_turns, 1.5);
        assert_eq!(m.tool_success_rate, 0.5);
        assert_eq!(m.mean_entropy, None);
        assert_eq!(m.vacuous_call_rate, 0.0);

        let single = aggregate(std::iter::once((&trajs[0], 1.0)), &[Some(0.5), None]).unwrap();
        assert_eq!((single.accuracy, single.avg_turns), (1.0, 1.0));
        assert_eq!(single.tool_success_rate, 0.0);
        assert_eq!(single.mean_entropy, Some(0.5));

        assert!(matches!(
            aggregate(std::iter::empty(), &[]),
            Err(AnalyticsError::EmptyInput)
        ));
    }

    #[test]
    fn csv_layout() {
        let m = MetricsReport {
            accuracy: 0.5,
            avg_turns: 1.0,
            tool_success_rate: 1.0,
            mean_entropy: None,
            vacuous_call_rate: 0.25,
        };
        assert_eq!(
            metrics_csv(&[(0, m)]),
            "step,accuracy,avg_turns,tool_success_rate,mean_entropy,vacuous_call_rate\n0,0.5,1,1,NA,0.25\n"
        );
    }

    #[test]
    fn sidecar_path_sits_next_to_trajectories() {
        assert_eq!(
            sidecar_path(Path::new("/tmp/run/trajectories.jsonl")),
            PathBuf::from("/tmp/run/trajectories.rewards.jsonl")
        );
    }
}
