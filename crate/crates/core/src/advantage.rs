//! Group-relative sequence advantages, batch-normalized turn advantages,
//! per-token assignment, and the clipped surrogate / entropy diagnostics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{token_spans, TokenSegmenter, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvantageError {
    #[error("group of {0} rewards; need at least 2")]
    GroupTooSmall(usize),
    #[error("{advantages} turn advantages for {turns} turns")]
    SpanMismatch { turns: usize, advantages: usize },
    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid surrogate input: {0}")]
    InvalidSurrogate(String),
}

/// Which per-turn quantity the batch normalization runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnStatSource {
    /// Discounted returns G^m.
    #[default]
    Returns,
    /// Immediate penalties r^m.
    Penalties,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvantageConfig {
    pub clip_eps: f64,
    pub turn_stat_source: TurnStatSource,
    /// Whether turns without code join the normalization population. Their
    /// tokens receive no turn signal either way.
    pub include_no_code_turns: bool,
    pub segmenter: TokenSegmenter,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        AdvantageConfig {
            clip_eps: 0.2,
            turn_stat_source: TurnStatSource::Returns,
            include_no_code_turns: false,
            segmenter: TokenSegmenter::Whitespace,
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize(xs: &[f64], epsilon_std: f64) -> Vec<f64> {
    let (mean, std) = mean_std(xs);
    if std < epsilon_std {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / std).collect()
}

/// `(r_i − mean)/std` over one group; all zeros when the group has no spread.
pub fn group_seq_advantages(rewards: &[f64], epsilon_std: f64) -> Result<Vec<f64>, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    Ok(standardize(rewards, epsilon_std))
}

/// Standardizes turn values pooled across the whole batch.
pub fn turn_advantages(batch_values: &[f64], epsilon_std: f64) -> Vec<f64> {
    standardize(batch_values, epsilon_std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageMap {
    pub a_seq: f64,
    /// Index-aligned with turns; zero for turns that ran no code.
    pub a_turn: Vec<f64>,
    pub token_values: Vec<f64>,
}

/// Broadcasts `a_seq` to every token and adds each code turn's own turn
/// advantage to that turn's tokens.
pub fn assign_token_advantages(
    traj: &Trajectory,
    a_seq: f64,
    per_turn: &[f64],
    seg: TokenSegmenter,
) -> Result<AdvantageMap, AdvantageError> {
    if per_turn.len() != traj.turns.len() {
        return Err(AdvantageError::SpanMismatch {
            turns: traj.turns.len(),
            advantages: per_turn.len(),
        });
    }
    let spans = token_spans(traj, seg);
    let total = spans.last().map_or(0, |s| s.end);
    let mut token_values = Vec::with_capacity(total);
    let mut a_turn = Vec::with_capacity(per_turn.len());
    for ((turn, span), a) in traj.turns.iter().zip(&spans).zip(per_turn) {
        let local = if turn.executed_code() { *a } else { 0.0 };
        a_turn.push(local);
        token_values.extend(std::iter::repeat_n(a_seq + local, span.len()));
    }
    Ok(AdvantageMap {
        a_seq,
        a_turn,
        token_values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateInput {
    pub old_prob: Vec<f64>,
    pub new_prob: Vec<f64>,
    pub advantage: Vec<f64>,
    pub clip_eps: f64,
}

impl SurrogateInput {
    fn validate(&self) -> Result<(), AdvantageError> {
        let n = self.old_prob.len();
        if self.new_prob.len() != n || self.advantage.len() != n {
            return Err(AdvantageError::InvalidSurrogate(format!(
                "length mismatch: old {n}, new {}, advantage {}",
                self.new_prob.len(),
                self.advantage.len()
            )));
        }
        if n == 0 {
            return Err(AdvantageError::InvalidSurrogate("no tokens".into()));
        }
        let in_range = |p: &f64| *p > 0.0 && *p <= 1.0;
        if !self.old_prob.iter().chain(&self.new_prob).all(in_range) {
            return Err(AdvantageError::InvalidSurrogate(
                "probabilities must lie in (0, 1]".into(),
            ));
        }
        if !(self.clip_eps >= 0.0 && self.clip_eps.is_finite()) {
            return Err(AdvantageError::InvalidSurrogate(
                "clip_eps must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Token-mean of `min(ρA, clip(ρ, 1−ε, 1+ε)A)` with `ρ = new/old`.
pub fn clipped_surrogate(inp: &SurrogateInput) -> Result<f64, AdvantageError> {
    inp.validate()?;
    let (lo, hi) = (1.0 - inp.clip_eps, 1.0 + inp.clip_eps);
    let sum: f64 = inp
        .old_prob
        .iter()
        .zip(&inp.new_prob)
        .zip(&inp.advantage)
        .map(|((old, new), a)| {
            let ratio = new / old;
            (ratio * a).min(ratio.clamp(lo, hi) * a)
        })
        .sum();
    Ok(sum / inp.advantage.len() as f64)
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn policy_entropy(dist: &[f64]) -> Result<f64, AdvantageError> {
    let total: f64 = dist.iter().sum();
    if dist.iter().any(|p| *p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(AdvantageError::NotNormalized(total));
    }
    let plogp: f64 = dist.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum();
    // 0 - x rather than -x so a point mass reports +0, not -0.
    Ok(0.0 - plogp)
}
