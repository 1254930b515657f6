use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::persist::{read_jsonl, to_jsonl, PersistError};
use crate::trajectory::QueryState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub query: QueryState,
    pub difficulty: Difficulty,
    /// Prints the gold answer when executed.
    pub solver_snippet: String,
    /// Chance that answering without tools is correct.
    pub direct_answer_correct_prob: f64,
}

impl SyntheticTask {
    pub fn gold(&self) -> &str {
        self.query.gold_answer.as_deref().unwrap_or("")
    }
}

/// Manifest record, one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub difficulty: Difficulty,
    pub prompt: String,
    pub gold: String,
    pub solver_snippet: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_answer_correct_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<PathBuf>,
}

impl From<TaskRecord> for SyntheticTask {
    fn from(r: TaskRecord) -> Self {
        let default_prob = match r.difficulty {
            Difficulty::Easy => 1.0,
            Difficulty::Hard => 0.0,
        };
        let mut query = QueryState::new(r.id, r.prompt).with_gold(r.gold);
        query.image_refs = r.images;
        SyntheticTask {
            query,
            difficulty: r.difficulty,
            solver_snippet: r.solver_snippet,
            direct_answer_correct_prob: r
                .direct_answer_correct_prob
                .unwrap_or(default_prob)
                .clamp(0.0, 1.0),
        }
    }
}

impl From<&SyntheticTask> for TaskRecord {
    fn from(t: &SyntheticTask) -> Self {
        TaskRecord {
            id: t.query.query_id.clone(),
            difficulty: t.difficulty,
            prompt: t.query.prompt_text.clone(),
            gold: t.gold().to_string(),
            solver_snippet: t.solver_snippet.clone(),
            direct_answer_correct_prob: Some(t.direct_answer_correct_prob),
            images: t.query.image_refs.clone(),
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<SyntheticTask>, PersistError> {
    let records: Vec<TaskRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(SyntheticTask::from).collect())
}

pub fn manifest_to_jsonl(tasks: &[SyntheticTask]) -> String {
    let records: Vec<TaskRecord> = tasks.iter().map(TaskRecord::from).collect();
    to_jsonl(&records)
}

/// Deterministic arithmetic suite. Easy tasks are single additions a direct
/// answer gets right; hard tasks hide their operands behind a computation
/// only the solver snippet reveals.
pub fn synthetic_suite(n_easy: usize, n_hard: usize, seed: u64) -> Vec<SyntheticTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(n_easy + n_hard);
    for i in 0..n_easy {
        let a: i64 = rng.gen_range(1..10);
        let b: i64 = rng.gen_range(1..10);
        tasks.push(SyntheticTask {
            query: QueryState::new(format!("easy-{i:03}"), format!("What is {a} + {b}?"))
                .with_gold((a + b).to_string()),
            difficulty: Difficulty::Easy,
            solver_snippet: format!("print({a} + {b})"),
            direct_answer_correct_prob: 1.0,
        });
    }
    for i in 0..n_hard {
        let a: i64 = rng.gen_range(1000..10000);
        let b: i64 = rng.gen_range(100..1000);
        let c: i64 = rng.gen_range(2..50);
        let gold = (a * b) % 9973 + c;
        tasks.push(SyntheticTask {
            query: QueryState::new(
                format!("hard-{i:03}"),
                "The measured region yields two readings; report (first * second) mod 9973 plus the offset.",
            )
            .with_gold(gold.to_string()),
            difficulty: Difficulty::Hard,
            solver_snippet: format!(
                "first = {a}\nsecond = {b}\noffset = {c}\nprint(first * second % 9973 + offset)"
            ),
            direct_answer_correct_prob: 0.0,
        });
    }
    tasks
}
