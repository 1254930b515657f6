use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::{parse_rollout_lenient, SegmentKind};
use crate::trajectory::{Action, QueryState, Trajectory};

use super::tasks::{Difficulty, SyntheticTask};

/// What a policy sees before acting.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub query: &'a QueryState,
    /// Serialized rollout so far.
    pub history: &'a str,
    /// 1-based index of the turn about to be taken.
    pub turn: usize,
    pub max_turns: usize,
}

impl PolicyContext<'_> {
    /// True when this turn is the last one the budget allows.
    pub fn budget_is_final(&self) -> bool {
        self.turn >= self.max_turns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub think: String,
    pub action: Action,
    /// Probabilities over `[call tool, answer]`, when the policy exposes them.
    pub distribution: Option<Vec<f64>>,
}

pub trait Policy: Send {
    fn act(&mut self, ctx: &PolicyContext<'_>) -> PolicyStep;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedPolicyKind {
    /// Calls a tool every turn until the budget runs out.
    ToolSpammer,
    /// Answers immediately.
    ToolAvoider,
    /// Answers directly on easy tasks; runs the solver once on hard ones.
    Adaptive,
    /// Re-emits a recorded trajectory.
    Replay,
}

impl ScriptedPolicyKind {
    pub const ALL: [ScriptedPolicyKind; 4] = [
        ScriptedPolicyKind::ToolSpammer,
        ScriptedPolicyKind::ToolAvoider,
        ScriptedPolicyKind::Adaptive,
        ScriptedPolicyKind::Replay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptedPolicyKind::ToolSpammer => "tool-spammer",
            ScriptedPolicyKind::ToolAvoider => "tool-avoider",
            ScriptedPolicyKind::Adaptive => "adaptive",
            ScriptedPolicyKind::Replay => "replay",
        }
    }
}

impl fmt::Display for ScriptedPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScriptedPolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown policy kind {s:?}; expected one of tool-spammer, tool-avoider, adaptive, replay"
                )
            })
    }
}

/// Deterministic test policy bound to one task and one seed.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    kind: ScriptedPolicyKind,
    task: SyntheticTask,
    rng: ChaCha8Rng,
    spam_snippet: Option<String>,
    replay: Option<Trajectory>,
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptedPolicyKind, task: &SyntheticTask, seed: u64) -> Self {
        ScriptedPolicy {
            kind,
            task: task.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            spam_snippet: None,
            replay: None,
        }
    }

    /// Snippet the spammer emits instead of the task's solver.
    pub fn with_spam_snippet(mut self, snippet: impl Into<String>) -> Self {
        self.spam_snippet = Some(snippet.into());
        self
    }

    pub fn with_replay(mut self, recorded: Trajectory) -> Self {
        self.replay = Some(recorded);
        self
    }

    fn direct_answer(&mut self) -> String {
        let gold = self.task.gold().to_string();
        if self.rng.gen_bool(self.task.direct_answer_correct_prob) {
            gold
        } else if gold.trim().eq_ignore_ascii_case("unknown") {
            "none".into()
        } else {
            "unknown".into()
        }
    }

    fn first_turn_belief(&self) -> Vec<f64> {
        let p = self.task.direct_answer_correct_prob;
        vec![1.0 - p, p]
    }

    fn adaptive(&mut self, ctx: &PolicyContext<'_>) -> PolicyStep {
        let observed = last_interpreter_output(ctx.history);
        let solve_with_tool = self.task.difficulty == Difficulty::Hard;
        if ctx.turn == 1 && solve_with_tool && !ctx.budget_is_final() {
            return PolicyStep {
                think: "The readings are not visible directly; compute them.".into(),
                action: Action::ToolCall(self.task.solver_snippet.clone()),
                distribution: Some(self.first_turn_belief()),
            };
        }
        let (think, answer) = match observed.filter(|o| !o.is_empty()) {
            Some(out) => ("The interpreter output gives the result.".to_string(), out),
            None => (
                "Simple enough to answer directly.".to_string(),
                self.direct_answer(),
            ),
        };
        let distribution = if ctx.turn == 1 {
            self.first_turn_belief()
        } else {
            vec![0.0, 1.0]
        };
        PolicyStep {
            think,
            action: Action::Answer(answer),
            distribution: Some(distribution),
        }
    }

    fn replay(&mut self, ctx: &PolicyContext<'_>) -> PolicyStep {
        let recorded = self.replay.as_ref().and_then(|t| t.turns.get(ctx.turn - 1));
        match recorded {
            Some(turn) => PolicyStep {
                think: turn.think_text.clone(),
                action: turn.action.clone(),
                distribution: None,
            },
            None => PolicyStep {
                think: String::new(),
                action: Action::Answer(String::new()),
                distribution: None,
            },
        }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, ctx: &PolicyContext<'_>) -> PolicyStep {
        match self.kind {
            ScriptedPolicyKind::ToolSpammer => PolicyStep {
                think: "Run the code again to be sure.".into(),
                action: Action::ToolCall(
                    self.spam_snippet
                        .clone()
                        .unwrap_or_else(|| self.task.solver_snippet.clone()),
                ),
                distribution: Some(vec![1.0, 0.0]),
            },
            ScriptedPolicyKind::ToolAvoider => PolicyStep {
                think: "No tools needed.".into(),
                action: Action::Answer(self.direct_answer()),
                distribution: Some(vec![0.0, 1.0]),
            },
            ScriptedPolicyKind::Adaptive => self.adaptive(ctx),
            ScriptedPolicyKind::Replay => self.replay(ctx),
        }
    }
}

/// Trimmed body of the last `<interpreter>` block in a rollout.
pub fn last_interpreter_output(history: &str) -> Option<String> {
    let parsed = parse_rollout_lenient(history).ok()?;
    parsed
        .of_kind(SegmentKind::Interpreter)
        .last()
        .map(|s| s.text.trim().to_string())
}
