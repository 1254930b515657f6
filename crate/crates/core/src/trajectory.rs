//! Trajectory data model: a query, an append-only list of turns, and how the
//! rollout ended.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::SegmentKind;
use crate::sandbox::{ExecResult, ExecStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub query_id: String,
    pub prompt_text: String,
    #[serde(default)]
    pub image_refs: Vec<PathBuf>,
    pub gold_answer: Option<String>,
}

impl QueryState {
    pub fn new(query_id: impl Into<String>, prompt_text: impl Into<String>) -> Self {
        QueryState {
            query_id: query_id.into(),
            prompt_text: prompt_text.into(),
            image_refs: Vec::new(),
            gold_answer: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_answer = Some(gold.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    ToolCall(String),
    Answer(String),
}

impl Action {
    pub fn is_tool_call(&self) -> bool {
        matches!(self, Action::ToolCall(_))
    }

    pub fn snippet(&self) -> Option<&str> {
        match self {
            Action::ToolCall(s) => Some(s),
            Action::Answer(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based.
    pub index: usize,
    pub think_text: String,
    pub action: Action,
    pub exec_result: Option<ExecResult>,
    pub observation_text: String,
    pub token_span: (usize, usize),
}

impl TurnRecord {
    /// Whether this turn ran code in the sandbox.
    pub fn executed_code(&self) -> bool {
        self.action.is_tool_call()
    }

    pub fn succeeded(&self) -> bool {
        self.exec_result
            .as_ref()
            .is_some_and(|r| r.status == ExecStatus::Ok)
    }

    /// Policy-visible text of the turn in rollout tag format.
    pub fn render(&self) -> String {
        let mut out = format!("<think>{}</think>", self.think_text);
        match &self.action {
            Action::ToolCall(snippet) => {
                out.push_str("<code>```python\n");
                out.push_str(snippet);
                out.push_str("\n```</code>");
                out.push_str(&self.observation_text);
            }
            Action::Answer(text) => {
                out.push_str("<answer>");
                out.push_str(text);
                out.push_str("</answer>");
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Answer,
    TurnBudgetExhausted,
}

/// Splits rendered text into tokens for advantage bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSegmenter {
    #[default]
    Whitespace,
    /// Fixed-size chunks of `n` characters (the last chunk may be shorter).
    FixedWidth(usize),
}

impl TokenSegmenter {
    pub fn count(&self, text: &str) -> usize {
        match *self {
            TokenSegmenter::Whitespace => text.split_whitespace().count(),
            TokenSegmenter::FixedWidth(n) => text.chars().count().div_ceil(n.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryError {
    #[error("trajectory already terminated")]
    TrajectoryTerminated,
    #[error("turn budget of {max_turns} exceeded")]
    TurnBudgetExceeded { max_turns: usize },
    #[error("tool call turn recorded without an execution result")]
    MissingExecResult,
    #[error("answer turn recorded with an execution result")]
    UnexpectedExecResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: QueryState,
    pub turns: Vec<TurnRecord>,
    pub terminated_by: Option<Termination>,
    pub max_turns: usize,
    #[serde(skip)]
    pub segmenter: TokenSegmenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToolCallStats {
    pub succeeded: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnSpan {
    pub turn_index: usize,
    pub start: usize,
    pub end: usize,
}

impl TurnSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl Trajectory {
    pub fn new(query: QueryState, max_turns: usize) -> Self {
        Trajectory {
            query,
            turns: Vec::new(),
            terminated_by: None,
            max_turns,
            segmenter: TokenSegmenter::default(),
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated_by.is_some()
    }

    /// Appends one think–execute–feedback turn. An `Answer` action ends the
    /// trajectory; filling the budget without one ends it as exhausted.
    pub fn record_turn(
        &mut self,
        think: impl Into<String>,
        action: Action,
        exec: Option<ExecResult>,
    ) -> Result<&TurnRecord, TrajectoryError> {
        if self.is_terminated() {
            return Err(TrajectoryError::TrajectoryTerminated);
        }
        if self.turns.len() >= self.max_turns {
            return Err(TrajectoryError::TurnBudgetExceeded {
                max_turns: self.max_turns,
            });
        }
        match (&action, &exec) {
            (Action::ToolCall(_), None) => return Err(TrajectoryError::MissingExecResult),
            (Action::Answer(_), Some(_)) => return Err(TrajectoryError::UnexpectedExecResult),
            _ => {}
        }
        let observation_text = exec.as_ref().map(render_observation).unwrap_or_default();
        let start = self.turns.last().map_or(0, |t| t.token_span.1);
        let mut turn = TurnRecord {
            index: self.turns.len() + 1,
            think_text: think.into(),
            action,
            exec_result: exec,
            observation_text,
            token_span: (start, start),
        };
        turn.token_span.1 = start + self.segmenter.count(&turn.render());
        let answered = !turn.action.is_tool_call();
        self.turns.push(turn);
        if answered {
            self.terminated_by = Some(Termination::Answer);
        } else if self.turns.len() == self.max_turns {
            self.terminated_by = Some(Termination::TurnBudgetExhausted);
        }
        Ok(self.turns.last().expect("just pushed"))
    }

    pub fn final_answer(&self) -> Option<&str> {
        match (self.terminated_by, self.turns.last()) {
            (Some(Termination::Answer), Some(t)) => match &t.action {
                Action::Answer(a) => Some(a),
                Action::ToolCall(_) => None,
            },
            _ => None,
        }
    }

    /// The full rollout in tag format, one turn per line.
    pub fn render(&self) -> String {
        self.turns
            .iter()
            .map(TurnRecord::render)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn tool_call_stats(&self) -> ToolCallStats {
        tool_call_stats(self)
    }

    pub fn token_count(&self, seg: TokenSegmenter) -> usize {
        self.turns.iter().map(|t| seg.count(&t.render())).sum()
    }
}

pub fn tool_call_stats(traj: &Trajectory) -> ToolCallStats {
    let mut stats = ToolCallStats {
        succeeded: 0,
        total: 0,
    };
    for t in traj.turns.iter().filter(|t| t.executed_code()) {
        stats.total += 1;
        if t.succeeded() {
            stats.succeeded += 1;
        }
    }
    stats
}

/// Token spans of each turn's rendered text, laid end to end.
pub fn token_spans(traj: &Trajectory, seg: TokenSegmenter) -> Vec<TurnSpan> {
    let mut cursor = 0;
    traj.turns
        .iter()
        .map(|t| {
            let n = seg.count(&t.render());
            let span = TurnSpan {
                turn_index: t.index,
                start: cursor,
                end: cursor + n,
            };
            cursor += n;
            span
        })
        .collect()
}

fn escape_tags(text: &str) -> String {
    let mut out = text.to_string();
    for kind in SegmentKind::ALL {
        for tag in [format!("<{}>", kind.tag()), format!("</{}>", kind.tag())] {
            if out.contains(&tag) {
                out = out.replace(&tag, &tag.replacen('<', "&lt;", 1));
            }
        }
    }
    out
}

/// Interpreter feedback for the next turn: stdout, stderr and artifact
/// placeholders wrapped in `<interpreter>` tags.
pub fn render_observation(exec: &ExecResult) -> String {
    let mut body = String::new();
    body.push_str(&exec.stdout);
    if !exec.stderr.is_empty() {
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        body.push_str(&exec.stderr);
    }
    if exec.status == ExecStatus::Timeout {
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        body.push_str("[execution timed out]");
    }
    for a in &exec.artifacts {
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        body.push_str(&format!("[artifact: {}]", a.display()));
    }
    format!("<interpreter>{}</interpreter>", escape_tags(&body))
}
