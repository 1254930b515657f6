//! Reward components: answer accuracy, format compliance, the group-adaptive
//! sequence-level tool reward, and discounted turn-level execution returns.
//!
//! The scalar trajectory reward is `r_acc + r_format + r_seq`. Turn returns
//! are carried alongside and only feed turn-level advantages.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::grammar::{check_format, FormatReport};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMatcher {
    /// Whitespace-normalized, case-insensitive equality.
    Exact,
    /// Absolute difference after parsing both sides as numbers.
    NumericTol(f64),
    /// Normalized gold is a substring of the normalized answer.
    Contains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Sharpness of the difficulty transition.
    pub gamma: f64,
    /// Baseline shift of the difficulty scale; controls suppression on easy groups.
    pub delta: f64,
    /// Discount for turn-level returns.
    pub beta: f64,
    pub fail_penalty: f64,
    pub format_weight: f64,
    pub epsilon_std: f64,
    pub matcher: AnswerMatcher,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            gamma: 4.0,
            delta: 0.2,
            beta: 0.2,
            fail_penalty: -0.5,
            format_weight: 0.5,
            epsilon_std: 1e-8,
            matcher: AnswerMatcher::Exact,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let fields = [
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("beta", self.beta),
            ("fail_penalty", self.fail_penalty),
            ("format_weight", self.format_weight),
            ("epsilon_std", self.epsilon_std),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(RewardError::InvalidConfig(format!(
                "{name} = {v} is not finite"
            )));
        }
        if self.gamma <= 0.0 {
            return Err(RewardError::InvalidConfig("gamma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(RewardError::InvalidConfig(
                "delta must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(RewardError::InvalidConfig("beta must lie in [0, 1)".into()));
        }
        if self.epsilon_std <= 0.0 {
            return Err(RewardError::InvalidConfig(
                "epsilon_std must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("{what} = {value} outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("cannot parse {0:?} as a number")]
    UnparseableNumber(String),
    #[error("query {0} has no gold answer")]
    MissingGold(String),
    #[error("group of {0} trajectories; need at least 2")]
    GroupTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group_size: usize,
    pub mu_acc: f64,
}

impl GroupStats {
    /// Fraction of members with a positive accuracy reward.
    pub fn from_accuracies(r_acc: &[f64]) -> Result<Self, RewardError> {
        if r_acc.len() < 2 {
            return Err(RewardError::GroupTooSmall(r_acc.len()));
        }
        let correct = r_acc.iter().filter(|r| **r > 0.0).count();
        Ok(GroupStats {
            group_size: r_acc.len(),
            mu_acc: correct as f64 / r_acc.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub d: f64,
    pub r_seq: f64,
    pub turn_penalties: Vec<f64>,
    pub turn_returns: Vec<f64>,
    pub composite: f64,
}

fn normalize_answer(s: &str) -> String {
    let mut t = s.trim();
    if let Some(inner) = t.strip_prefix("\\boxed{").and_then(|r| r.strip_suffix('}')) {
        t = inner.trim();
    }
    t.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn accuracy_reward(
    answer: &str,
    gold: &str,
    matcher: &AnswerMatcher,
) -> Result<f64, RewardError> {
    let a = normalize_answer(answer);
    let g = normalize_answer(gold);
    let hit = match matcher {
        AnswerMatcher::Exact => a == g,
        AnswerMatcher::Contains => a.contains(&g),
        AnswerMatcher::NumericTol(tol) => {
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| RewardError::UnparseableNumber(s.to_string()))
            };
            (parse(&a)? - parse(&g)?).abs() <= *tol
        }
    };
    Ok(if hit { 1.0 } else { 0.0 })
}

pub fn format_reward(report: &FormatReport, cfg: &RewardConfig) -> f64 {
    if report.compliant() {
        cfg.format_weight
    } else {
        0.0
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `d = σ(γ(0.5 − μ_acc)) − δ`. Positive on hard groups, negative once the
/// group accuracy passes [`sign_threshold`].
pub fn difficulty_scale(mu_acc: f64, cfg: &RewardConfig) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&mu_acc) {
        return Err(RewardError::Domain {
            what: "mu_acc",
            value: mu_acc,
            domain: "[0, 1]",
        });
    }
    Ok(sigmoid(cfg.gamma * (0.5 - mu_acc)) - cfg.delta)
}

/// Group accuracy at which the difficulty scale crosses zero:
/// `0.5 − logit(δ)/γ`.
pub fn sign_threshold(cfg: &RewardConfig) -> Result<f64, RewardError> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(RewardError::Domain {
            what: "delta",
            value: cfg.delta,
            domain: "(0, 1)",
        });
    }
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(RewardError::Domain {
            what: "gamma",
            value: cfg.gamma,
            domain: "(0, inf)",
        });
    }
    let logit = (cfg.delta / (1.0 - cfg.delta)).ln();
    Ok(0.5 - logit / cfg.gamma)
}

/// `(0.5 + 0.5·[correct]) · d · n_succ/n_total`, zero without tool calls.
pub fn sequence_tool_reward(acc_correct: bool, d: f64, n_succ: usize, n_total: usize) -> f64 {
    debug_assert!(n_succ <= n_total);
    if n_total == 0 {
        return 0.0;
    }
    let base = if acc_correct { 1.0 } else { 0.5 };
    base * d * (n_succ as f64 / n_total as f64)
}

/// Immediate per-turn penalties: `fail_penalty` for tool calls that did not
/// return Ok (timeouts included), zero otherwise.
pub fn turn_penalties(traj: &Trajectory, cfg: &RewardConfig) -> Vec<f64> {
    traj.turns
        .iter()
        .map(|t| {
            if t.executed_code() && !t.succeeded() {
                cfg.fail_penalty
            } else {
                0.0
            }
        })
        .collect()
}

/// `G^m = r^m + β·G^{m+1}` with `G^{M+1} = 0`.
pub fn discounted_returns(penalties: &[f64], beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; penalties.len()];
    let mut next = 0.0;
    for (m, r) in penalties.iter().enumerate().rev() {
        next = r + beta * next;
        out[m] = next;
    }
    out
}

pub fn turn_returns(traj: &Trajectory, cfg: &RewardConfig) -> (Vec<f64>, Vec<f64>) {
    let penalties = turn_penalties(traj, cfg);
    let returns = discounted_returns(&penalties, cfg.beta);
    (penalties, returns)
}

/// Accuracy reward of a finished trajectory. Budget-exhausted rollouts score
/// zero; unparseable numeric answers score zero with a warning.
pub fn trajectory_accuracy(traj: &Trajectory, cfg: &RewardConfig) -> Result<f64, RewardError> {
    let gold = traj
        .query
        .gold_answer
        .as_deref()
        .ok_or_else(|| RewardError::MissingGold(traj.query.query_id.clone()))?;
    let Some(answer) = traj.final_answer() else {
        return Ok(0.0);
    };
    match accuracy_reward(answer, gold, &cfg.matcher) {
        Err(RewardError::UnparseableNumber(s)) => {
            warn!(query = %traj.query.query_id, "unparseable numeric answer {s:?}, scoring 0");
            Ok(0.0)
        }
        other => other,
    }
}

pub fn composite_reward(
    traj: &Trajectory,
    group: &GroupStats,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let r_acc = trajectory_accuracy(traj, cfg)?;
    let r_format = format_reward(&check_format(&traj.render()), cfg);
    let d = difficulty_scale(group.mu_acc, cfg)?;
    let stats = traj.tool_call_stats();
    let r_seq = sequence_tool_reward(r_acc > 0.0, d, stats.succeeded, stats.total);
    let (turn_penalties, turn_returns) = turn_returns(traj, cfg);
    Ok(RewardBreakdown {
        r_acc,
        r_format,
        d,
        r_seq,
        turn_penalties,
        turn_returns,
        composite: r_acc + r_format + r_seq,
    })
}

/// Scores every member of one group: accuracy first, then the group
/// statistics, then each composite.
pub fn score_group(
    trajs: &[Trajectory],
    cfg: &RewardConfig,
) -> Result<(GroupStats, Vec<RewardBreakdown>), RewardError> {
    cfg.validate()?;
    let acc = trajs
        .iter()
        .map(|t| trajectory_accuracy(t, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = GroupStats::from_accuracies(&acc)?;
    let breakdowns = trajs
        .iter()
        .map(|t| composite_reward(t, &stats, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((stats, breakdowns))
}
