//! Batch pipeline from finished trajectories to rewards and token advantages.
//!
//! Rewards are group-relative, so scoring happens only after every member of
//! every group is complete. Turn advantages are normalized over the whole
//! batch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{
    assign_token_advantages, group_seq_advantages, turn_advantages, AdvantageConfig,
    AdvantageError, AdvantageMap, TurnStatSource,
};
use crate::reward::{score_group, GroupStats, RewardBreakdown, RewardConfig, RewardError};
use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("reward: {0}")]
    Reward(#[from] RewardError),
    #[error("advantage: {0}")]
    Advantage(#[from] AdvantageError),
    #[error("group {query_id}: {source}")]
    Group {
        query_id: String,
        #[source]
        source: RewardError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub rewards: RewardBreakdown,
    pub advantages: AdvantageMap,
}

/// All rollouts for one query with their group statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub query_id: String,
    pub stats: GroupStats,
    pub members: Vec<ScoredTrajectory>,
}

/// Groups trajectories by query id, keeping first-appearance order.
pub fn group_by_query(trajs: Vec<Trajectory>) -> Vec<Vec<Trajectory>> {
    let mut groups: Vec<Vec<Trajectory>> = Vec::new();
    for t in trajs {
        match groups
            .iter_mut()
            .find(|g| g[0].query.query_id == t.query.query_id)
        {
            Some(g) => g.push(t),
            None => groups.push(vec![t]),
        }
    }
    groups
}

pub fn score_batch(
    groups: Vec<Vec<Trajectory>>,
    reward_cfg: &RewardConfig,
    adv_cfg: &AdvantageConfig,
) -> Result<Vec<GroupBatch>, ScoringError> {
    let mut scored = Vec::with_capacity(groups.len());
    for trajs in groups {
        let query_id = trajs
            .first()
            .map(|t| t.query.query_id.clone())
            .unwrap_or_default();
        let (stats, rewards) =
            score_group(&trajs, reward_cfg).map_err(|source| ScoringError::Group {
                query_id: query_id.clone(),
                source,
            })?;
        let composites: Vec<f64> = rewards.iter().map(|r| r.composite).collect();
        let a_seq = group_seq_advantages(&composites, reward_cfg.epsilon_std)?;
        scored.push((query_id, stats, trajs, rewards, a_seq));
    }

    // Pool per-turn values over the batch.
    let mut population = Vec::new();
    for (_, _, trajs, rewards, _) in &scored {
        for (t, r) in trajs.iter().zip(rewards) {
            for (m, turn) in t.turns.iter().enumerate() {
                if turn.executed_code() || adv_cfg.include_no_code_turns {
                    population.push(match adv_cfg.turn_stat_source {
                        TurnStatSource::Returns => r.turn_returns[m],
                        TurnStatSource::Penalties => r.turn_penalties[m],
                    });
                }
            }
        }
    }
    let normalized = turn_advantages(&population, reward_cfg.epsilon_std);
    let mut next = normalized.into_iter();

    let mut out = Vec::with_capacity(scored.len());
    for (query_id, stats, trajs, rewards, a_seq) in scored {
        let mut members = Vec::with_capacity(trajs.len());
        for ((t, r), seq) in trajs.into_iter().zip(rewards).zip(a_seq) {
            let per_turn: Vec<f64> = t
                .turns
                .iter()
                .map(|turn| {
                    if turn.executed_code() || adv_cfg.include_no_code_turns {
                        next.next().expect("one value per pooled turn")
                    } else {
                        0.0
                    }
                })
                .collect();
            let advantages = assign_token_advantages(&t, seq, &per_turn, adv_cfg.segmenter)?;
            members.push(ScoredTrajectory {
                trajectory: t,
                rewards: r,
                advantages,
            });
        }
        out.push(GroupBatch {
            query_id,
            stats,
            members,
        });
    }
    Ok(out)
}

/// One sidecar line per trajectory, aligned with the trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub trajectory_index: usize,
    pub query_id: String,
    pub mu_acc: f64,
    pub r_acc: f64,
    pub r_format: f64,
    pub d: f64,
    pub r_seq: f64,
    pub turn_penalties: Vec<f64>,
    pub turn_returns: Vec<f64>,
    pub composite: f64,
    pub a_seq: f64,
    pub a_turn: Vec<f64>,
    pub token_advantages: Vec<f64>,
}

/// Flattens scored groups into sidecar records, numbering trajectories in
/// group order.
pub fn sidecar_records(batches: &[GroupBatch]) -> Vec<SidecarRecord> {
    let mut out = Vec::new();
    for g in batches {
        for m in &g.members {
            let r = &m.rewards;
            out.push(SidecarRecord {
                trajectory_index: out.len(),
                query_id: g.query_id.clone(),
                mu_acc: g.stats.mu_acc,
                r_acc: r.r_acc,
                r_format: r.r_format,
                d: r.d,
                r_seq: r.r_seq,
                turn_penalties: r.turn_penalties.clone(),
                turn_returns: r.turn_returns.clone(),
                composite: r.composite,
                a_seq: m.advantages.a_seq,
                a_turn: m.advantages.a_turn.clone(),
                token_advantages: m.advantages.token_values.clone(),
            });
        }
    }
    out
}

/// Trajectories in the same order as [`sidecar_records`].
pub fn flatten_trajectories(batches: &[GroupBatch]) -> Vec<Trajectory> {
    batches
        .iter()
        .flat_map(|g| g.members.iter().map(|m| m.trajectory.clone()))
        .collect()
}
