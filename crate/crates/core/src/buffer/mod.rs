//! Generation-stamped trajectory storage. Failures go to the support set
//! (consumed by skill evolution), successes to the RL buffer (consumed by
//! the trainer); the two never share an entry.

mod snapshot;

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{FailureRecord, SuccessThresholds};
use crate::simbench::TaskKind;

pub use snapshot::{load_snapshot, read_snapshot, save_snapshot, write_snapshot};

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("trajectory stamped with generation {got}, current generation is {current}")]
    GenerationMismatch { current: u64, got: u64 },
    #[error("trajectory {0} already has a role")]
    RoleAlreadyAssigned(String),
    #[error("requested {requested} samples from a buffer of {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error("corrupt snapshot at line {line}: {reason}")]
    CorruptSnapshot { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Support,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: String,
    pub observation: String,
}

/// One served task: what the agent did, how it scored and under which
/// skill generation it was collected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub kind: TaskKind,
    pub generation: u64,
    pub policy_version: u64,
    pub actions: Vec<Step>,
    pub reward: f64,
    pub components: BTreeMap<String, bool>,
    pub feedback: String,
    pub role: Option<Role>,
    pub skill_names_used: Vec<String>,
    pub day_index: u32,
    pub collected_at: DateTime<Utc>,
}

impl Trajectory {
    pub fn conversation(&self) -> String {
        let mut out = String::new();
        for step in &self.actions {
            out.push_str("> ");
            out.push_str(&step.action);
            out.push('\n');
            out.push_str(&step.observation);
            out.push('\n');
        }
        out
    }

    /// The agent's final answer or file body.
    pub fn response(&self) -> &str {
        self.actions.last().map(|s| s.action.as_str()).unwrap_or("")
    }

    pub fn to_failure_record(&self) -> FailureRecord {
        FailureRecord::new(
            self.task_id.clone(),
            self.generation,
            self.feedback.clone(),
            &self.conversation(),
            self.response(),
            self.reward,
        )
    }
}

/// Sent by evolution when the generation moves past `generation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushStale {
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushMode {
    /// Drop every sample whose generation is at or below the flushed one.
    #[default]
    Algorithm1,
    /// Keep older generations; each sample keeps its own generation stamp.
    RetainMultiGeneration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    ToSupport,
    ToQuery,
}

/// Query-role trajectories eligible for policy training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RlBuffer {
    entries: VecDeque<Trajectory>,
    capacity: Option<usize>,
    appended_total: u64,
    retained_through: Option<u64>,
}

pub type SharedBuffer = Arc<Mutex<BufferState>>;

impl RlBuffer {
    pub fn new(capacity: Option<usize>) -> Self {
        if let Some(c) = capacity {
            assert!(c > 0, "buffer capacity must be positive");
        }
        RlBuffer { capacity, ..Default::default() }
    }

    pub fn from_entries(entries: Vec<Trajectory>, capacity: Option<usize>) -> Self {
        let mut buf = RlBuffer::new(capacity);
        for e in entries {
            buf.push(e);
        }
        buf
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Count of entries ever appended, evictions and flushes included.
    pub fn appended_total(&self) -> u64 {
        self.appended_total
    }

    /// In retain mode, the newest generation that has been superseded.
    pub fn retained_through(&self) -> Option<u64> {
        self.retained_through
    }

    pub fn min_generation(&self) -> Option<u64> {
        self.entries.iter().map(|e| e.generation).min()
    }

    fn push(&mut self, traj: Trajectory) {
        if let Some(cap) = self.capacity {
            while self.entries.len() >= cap {
                self.entries.pop_front();
            }
        }
        self.entries.push_back(traj);
        self.appended_total += 1;
    }

    pub fn flush_stale(&mut self, generation: u64, mode: FlushMode) -> usize {
        match mode {
            FlushMode::Algorithm1 => {
                let before = self.entries.len();
                self.entries.retain(|e| e.generation > generation);
                before - self.entries.len()
            }
            FlushMode::RetainMultiGeneration => {
                self.retained_through = Some(self.retained_through.map_or(generation, |g| g.max(generation)));
                0
            }
        }
    }

    pub fn is_train_ready(&self, batch_size: usize) -> bool {
        assert!(batch_size >= 1, "batch size must be at least 1");
        self.entries.len() >= batch_size
    }

    /// Uniform sample of `n` distinct entries. Sampling does not consume.
    pub fn sample_batch(&self, n: usize, seed: u64) -> Result<Vec<Trajectory>, BufferError> {
        if n > self.entries.len() {
            return Err(BufferError::InsufficientData { requested: n, available: self.entries.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(rand::seq::index::sample(&mut rng, self.entries.len(), n)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }
}

/// Support set of the current generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupportSet {
    records: Vec<FailureRecord>,
}

impl SupportSet {
    pub fn records(&self) -> &[FailureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, task_id: &str) -> bool {
        self.records.iter().any(|r| r.task_id == task_id)
    }
}

/// Both stores plus the generation they are currently collecting under.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferState {
    rl: RlBuffer,
    support: SupportSet,
    generation: u64,
    mode: FlushMode,
    thresholds: Option<SuccessThresholds>,
}

impl BufferState {
    pub fn new(mode: FlushMode, capacity: Option<usize>) -> Self {
        BufferState { rl: RlBuffer::new(capacity), mode, ..Default::default() }
    }

    pub fn rl(&self) -> &RlBuffer {
        &self.rl
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn mode(&self) -> FlushMode {
        self.mode
    }

    /// Routes a freshly scored trajectory and assigns its role.
    pub fn record(&mut self, mut traj: Trajectory, thresholds: &SuccessThresholds) -> Result<Route, BufferError> {
        if traj.generation != self.generation {
            return Err(BufferError::GenerationMismatch { current: self.generation, got: traj.generation });
        }
        if traj.role.is_some() {
            return Err(BufferError::RoleAlreadyAssigned(traj.task_id));
        }
        self.thresholds = Some(*thresholds);
        if thresholds.is_success(traj.kind, traj.reward) {
            traj.role = Some(Role::Query);
            self.rl.push(traj);
            Ok(Route::ToQuery)
        } else {
            traj.role = Some(Role::Support);
            self.support.records.push(traj.to_failure_record());
            Ok(Route::ToSupport)
        }
    }

    /// Applies a flush and moves collection to the next generation. The
    /// support set is cleared: its records were consumed by evolution.
    pub fn advance_generation(&mut self, flush: FlushStale) -> usize {
        let flushed = self.rl.flush_stale(flush.generation, self.mode);
        self.support.records.clear();
        self.generation = self.generation.max(flush.generation + 1);
        flushed
    }

    pub fn sample_batch(&self, n: usize, seed: u64) -> Result<Vec<Trajectory>, BufferError> {
        self.rl.sample_batch(n, seed)
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use chrono::TimeZone;

    pub fn traj(id: &str, generation: u64, kind: TaskKind, reward: f64) -> Trajectory {
        Trajectory {
            task_id: id.to_string(),
            kind,
            generation,
            policy_version: 0,
            actions: vec![Step { action: format!("answer for {id}"), observation: "ok".into() }],
            reward,
            components: BTreeMap::new(),
            feedback: if reward < 1.0 { crate::rules::RuleId::P1.feedback().into() } else { String::new() },
            role: None,
            skill_names_used: vec![],
            day_index: 1,
            collected_at: Utc.with_ymd_and_hms(2026, 3, 16, 9, 0, 0).unwrap(),
        }
    }

    pub fn query(id: &str, generation: u64) -> Trajectory {
        let mut t = traj(id, generation, TaskKind::FileCheck, 1.0);
        t.role = Some(Role::Query);
        t
    }
}
