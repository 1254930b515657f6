//! Rollout orchestration: policy acts, sandbox executes, observation is
//! appended, until an answer or the turn budget ends the trajectory.

pub mod policy;
pub mod tasks;

use std::thread;

use thiserror::Error;
use tracing::debug;

use crate::advantage::{policy_entropy, AdvantageConfig};
use crate::reward::RewardConfig;
use crate::sandbox::{open_session, SandboxConfig, SandboxError};
use crate::scoring::{score_batch, GroupBatch, ScoringError};
use crate::trajectory::{Action, Trajectory, TrajectoryError};

pub use policy::{
    last_interpreter_output, Policy, PolicyContext, PolicyStep, ScriptedPolicy, ScriptedPolicyKind,
};
pub use tasks::{
    manifest_to_jsonl, read_manifest, synthetic_suite, Difficulty, SyntheticTask, TaskRecord,
};

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const MAX_TURNS_TRAIN: usize = 6;
pub const MAX_TURNS_EVAL: usize = 10;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("turn budget must be at least 1")]
    InvalidBudget,
    #[error("group size {0} is below 2")]
    GroupTooSmall(usize),
    #[error("{seeds} seeds for {members} group members")]
    SeedCount { seeds: usize, members: usize },
    #[error("sandbox failure after {} turns: {source}", partial.turns.len())]
    SandboxFailure {
        #[source]
        source: SandboxError,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// A finished rollout plus the mean entropy of the action distributions the
/// policy exposed, if it exposed one at every turn.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub trajectory: Trajectory,
    pub mean_entropy: Option<f64>,
}

pub fn run_rollout(
    policy: &mut dyn Policy,
    task: &SyntheticTask,
    sandbox_cfg: &SandboxConfig,
    max_turns: usize,
) -> Result<RolloutOutcome, RolloutError> {
    if max_turns == 0 {
        return Err(RolloutError::InvalidBudget);
    }
    let mut traj = Trajectory::new(task.query.clone(), max_turns);
    let session = match open_session(sandbox_cfg, &task.query.image_refs) {
        Ok(s) => s,
        Err(source) => {
            return Err(RolloutError::SandboxFailure {
                source,
                partial: Box::new(traj),
            })
        }
    };
    let mut entropies = Vec::new();
    let mut all_exposed = true;
    while !traj.is_terminated() {
        let history = traj.render();
        let ctx = PolicyContext {
            query: &task.query,
            history: &history,
            turn: traj.turns.len() + 1,
            max_turns,
        };
        let step = policy.act(&ctx);
        match step.distribution.as_deref().map(policy_entropy) {
            Some(Ok(h)) => entropies.push(h),
            _ => all_exposed = false,
        }
        let exec = match &step.action {
            Action::ToolCall(snippet) => match session.execute(snippet) {
                Ok(r) => Some(r),
                Err(source) => {
                    session.close();
                    return Err(RolloutError::SandboxFailure {
                        source,
                        partial: Box::new(traj),
                    });
                }
            },
            Action::Answer(_) => None,
        };
        traj.record_turn(step.think, step.action, exec)?;
    }
    session.close();
    debug!(query = %task.query.query_id, turns = traj.turns.len(), "rollout finished");
    let mean_entropy = (all_exposed && !entropies.is_empty())
        .then(|| entropies.iter().sum::<f64>() / entropies.len() as f64);
    Ok(RolloutOutcome {
        trajectory: traj,
        mean_entropy,
    })
}

/// Distinct per-member seeds for one task of a run.
pub fn member_seeds(base: u64, task_index: usize, group_size: usize) -> Vec<u64> {
    (0..group_size as u64)
        .map(|i| {
            base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((task_index as u64) << 20)
                .wrapping_add(i)
        })
        .collect()
}

/// Runs one rollout per policy concurrently, each in its own session.
pub fn collect_group(
    policies: Vec<Box<dyn Policy>>,
    task: &SyntheticTask,
    sandbox_cfg: &SandboxConfig,
    max_turns: usize,
) -> Result<Vec<RolloutOutcome>, RolloutError> {
    if policies.len() < 2 {
        return Err(RolloutError::GroupTooSmall(policies.len()));
    }
    thread::scope(|s| {
        let handles: Vec<_> = policies
            .into_iter()
            .map(|mut p| s.spawn(move || run_rollout(p.as_mut(), task, sandbox_cfg, max_turns)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout thread panicked"))
            .collect()
    })
}

/// Scripted-policy parameters shared by every member of a group.
#[derive(Debug, Clone, Default)]
pub struct PolicyOptions {
    pub spam_snippet: Option<String>,
    /// Recorded rollouts for replay. Member `i` of a group replays the
    /// `i`-th recording of the same query, cycling if there are fewer.
    pub replay: Vec<Trajectory>,
}

pub fn scripted_roster(
    kinds: &[ScriptedPolicyKind],
    task: &SyntheticTask,
    seeds: &[u64],
    opts: &PolicyOptions,
) -> Result<Vec<Box<dyn Policy>>, RolloutError> {
    if kinds.len() != seeds.len() {
        return Err(RolloutError::SeedCount {
            seeds: seeds.len(),
            members: kinds.len(),
        });
    }
    let recordings: Vec<&Trajectory> = opts
        .replay
        .iter()
        .filter(|t| t.query.query_id == task.query.query_id)
        .collect();
    Ok(kinds
        .iter()
        .zip(seeds)
        .enumerate()
        .map(|(i, (kind, seed))| {
            let mut p = ScriptedPolicy::new(*kind, task, *seed);
            if let Some(s) = &opts.spam_snippet {
                p = p.with_spam_snippet(s.clone());
            }
            if !recordings.is_empty() {
                p = p.with_replay(recordings[i % recordings.len()].clone());
            }
            Box::new(p) as Box<dyn Policy>
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct GroupSettings {
    pub sandbox: SandboxConfig,
    pub reward: RewardConfig,
    pub advantage: AdvantageConfig,
    pub max_turns: usize,
}

/// A scored group and each member's mean action entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGroup {
    pub batch: GroupBatch,
    pub entropies: Vec<Option<f64>>,
}

/// G rollouts of one policy kind on one task, scored as a single group.
pub fn run_group(
    kind: ScriptedPolicyKind,
    task: &SyntheticTask,
    seeds: &[u64],
    opts: &PolicyOptions,
    settings: &GroupSettings,
) -> Result<SimGroup, RolloutError> {
    run_mixed_group(&vec![kind; seeds.len()], task, seeds, opts, settings)
}

/// Like [`run_group`] with a per-member policy kind.
pub fn run_mixed_group(
    kinds: &[ScriptedPolicyKind],
    task: &SyntheticTask,
    seeds: &[u64],
    opts: &PolicyOptions,
    settings: &GroupSettings,
) -> Result<SimGroup, RolloutError> {
    let roster = scripted_roster(kinds, task, seeds, opts)?;
    let outcomes = collect_group(roster, task, &settings.sandbox, settings.max_turns)?;
    let entropies = outcomes.iter().map(|o| o.mean_entropy).collect();
    let trajs = outcomes.into_iter().map(|o| o.trajectory).collect();
    let batch = score_batch(vec![trajs], &settings.reward, &settings.advantage)?
        .pop()
        .expect("one group in, one group out");
    Ok(SimGroup { batch, entropies })
}

/// Runs every task as its own group and scores them together, so turn
/// advantages are normalized across the whole run.
pub fn run_suite(
    kind: ScriptedPolicyKind,
    tasks: &[SyntheticTask],
    group_size: usize,
    base_seed: u64,
    opts: &PolicyOptions,
    settings: &GroupSettings,
) -> Result<(Vec<GroupBatch>, Vec<Option<f64>>), RolloutError> {
    let mut groups = Vec::with_capacity(tasks.len());
    let mut entropies = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let seeds = member_seeds(base_seed, i, group_size);
        let roster = scripted_roster(&vec![kind; group_size], task, &seeds, opts)?;
        let outcomes = collect_group(roster, task, &settings.sandbox, settings.max_turns)?;
        entropies.extend(outcomes.iter().map(|o| o.mean_entropy));
        groups.push(outcomes.into_iter().map(|o| o.trajectory).collect());
    }
    let batches = score_batch(groups, &settings.reward, &settings.advantage)?;
    Ok((batches, entropies))
}
