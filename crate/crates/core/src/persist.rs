//! Newline-delimited JSON files: trajectories, reward/advantage sidecars,
//! policy telemetry, and task manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::{ExecResult, ExecStatus};
use crate::trajectory::{Action, QueryState, Termination, TokenSegmenter, Trajectory, TurnRecord};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Schema {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ToolCall,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLine {
    pub index: usize,
    pub think_text: String,
    pub action_kind: ActionKind,
    pub snippet_or_answer: String,
    pub exec_status: Option<ExecStatus>,
    pub stdout: Option<String>,
    pub stderr: Option<String>,
    pub artifacts: Option<Vec<String>>,
    pub observation_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationLine {
    Answer,
    TurnBudgetExhausted,
}

/// One trajectory per line; field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub query_id: String,
    pub prompt_text: String,
    pub gold_answer: Option<String>,
    pub turns: Vec<TurnLine>,
    pub terminated_by: Option<TerminationLine>,
    pub max_turns: usize,
}

impl From<&Trajectory> for TrajectoryLine {
    fn from(t: &Trajectory) -> Self {
        TrajectoryLine {
            query_id: t.query.query_id.clone(),
            prompt_text: t.query.prompt_text.clone(),
            gold_answer: t.query.gold_answer.clone(),
            turns: t
                .turns
                .iter()
                .map(|turn| {
                    let (action_kind, text) = match &turn.action {
                        Action::ToolCall(s) => (ActionKind::ToolCall, s.clone()),
                        Action::Answer(a) => (ActionKind::Answer, a.clone()),
                    };
                    let exec = turn.exec_result.as_ref();
                    TurnLine {
                        index: turn.index,
                        think_text: turn.think_text.clone(),
                        action_kind,
                        snippet_or_answer: text,
                        exec_status: exec.map(|e| e.status),
                        stdout: exec.map(|e| e.stdout.clone()),
                        stderr: exec.map(|e| e.stderr.clone()),
                        artifacts: exec.map(|e| {
                            e.artifacts
                                .iter()
                                .map(|p| p.to_string_lossy().into_owned())
                                .collect()
                        }),
                        observation_text: turn.observation_text.clone(),
                    }
                })
                .collect(),
            terminated_by: t.terminated_by.map(|x| match x {
                Termination::Answer => TerminationLine::Answer,
                Termination::TurnBudgetExhausted => TerminationLine::TurnBudgetExhausted,
            }),
            max_turns: t.max_turns,
        }
    }
}

impl TrajectoryLine {
    /// Rebuilds the in-memory trajectory. Durations, namespace deltas and
    /// image references are not persisted and come back empty.
    pub fn into_trajectory(self, seg: TokenSegmenter) -> Result<Trajectory, String> {
        if self.turns.len() > self.max_turns {
            return Err(format!(
                "{} turns exceed max_turns {}",
                self.turns.len(),
                self.max_turns
            ));
        }
        let mut query = QueryState::new(self.query_id, self.prompt_text);
        query.gold_answer = self.gold_answer;
        let mut turns = Vec::with_capacity(self.turns.len());
        let mut cursor = 0;
        let n = self.turns.len();
        for (pos, t) in self.turns.into_iter().enumerate() {
            if t.index != pos + 1 {
                return Err(format!("turn index {} at position {}", t.index, pos + 1));
            }
            let (action, exec_result) = match t.action_kind {
                ActionKind::ToolCall => {
                    let status = t
                        .exec_status
                        .ok_or_else(|| format!("tool call turn {} lacks exec_status", t.index))?;
                    let mut r = ExecResult::new(
                        status,
                        t.stdout.unwrap_or_default(),
                        t.stderr.unwrap_or_default(),
                    );
                    r.artifacts = t
                        .artifacts
                        .unwrap_or_default()
                        .into_iter()
                        .map(PathBuf::from)
                        .collect();
                    (Action::ToolCall(t.snippet_or_answer), Some(r))
                }
                ActionKind::Answer => {
                    if pos + 1 != n {
                        return Err(format!("answer at turn {} is not the final turn", t.index));
                    }
                    (Action::Answer(t.snippet_or_answer), None)
                }
            };
            let mut rec = TurnRecord {
                index: t.index,
                think_text: t.think_text,
                action,
                exec_result,
                observation_text: t.observation_text,
                token_span: (cursor, cursor),
            };
            cursor += seg.count(&rec.render());
            rec.token_span.1 = cursor;
            turns.push(rec);
        }
        let terminated_by = self.terminated_by.map(|x| match x {
            TerminationLine::Answer => Termination::Answer,
            TerminationLine::TurnBudgetExhausted => Termination::TurnBudgetExhausted,
        });
        let ends_in_answer = turns.last().is_some_and(|t| !t.executed_code());
        if (terminated_by == Some(Termination::Answer)) != ends_in_answer {
            return Err("terminated_by disagrees with the final turn".into());
        }
        Ok(Trajectory {
            query,
            turns,
            terminated_by,
            max_turns: self.max_turns,
            segmenter: seg,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a sibling temp file and rename so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), PersistError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PersistError::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn trajectories_to_jsonl(trajs: &[Trajectory]) -> String {
    let lines: Vec<TrajectoryLine> = trajs.iter().map(TrajectoryLine::from).collect();
    to_jsonl(&lines)
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<(), PersistError> {
    write_atomic(path, &trajectories_to_jsonl(trajs))
}

pub fn read_trajectories(
    path: &Path,
    seg: TokenSegmenter,
) -> Result<Vec<Trajectory>, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let schema = |msg: String| PersistError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let line: TrajectoryLine = serde_json::from_str(l).map_err(|e| schema(e.to_string()))?;
        out.push(line.into_trajectory(seg).map_err(schema)?);
    }
    Ok(out)
}
