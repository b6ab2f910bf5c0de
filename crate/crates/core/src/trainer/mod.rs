//! Simulated policy optimization.
//!
//! The policy is a handful of interpretable probabilities. Training pulls
//! each rule's compliance toward 1 whenever a sampled batch shows that rule
//! being broken, and pulls per-kind competence toward 1 in proportion to the
//! batch's mean reward.

mod checkpoint;
mod run;
mod slot;
mod worker;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::{BufferError, Role, Trajectory};
use crate::rules::RuleId;
use crate::simbench::{
    check_file, parse_options, score_multichoice, CheckResult, FileOp, SimError, TaskKind, TaskSpec, Workspace,
};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use run::{run_batches, BatchLog, PauseSignal, RunConfig, RunOutcome, StepOutcome, TrainRun};
pub use slot::PolicySlot;
pub use worker::{TrainerWorker, WorkerEvent};

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_BATCH_SIZE: usize = 8;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("task {0} is not in the registry")]
    UnknownTask(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("trajectory {0} is not query data")]
    RoleViolation(String),
    #[error("learning rate {0} is outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("run was planned under generation {run} but the library is at {current}")]
    StaleGeneration { run: u64, current: u64 },
    #[error("policy version race: expected to install {expected}, got {got}")]
    VersionRace { expected: u64, got: u64 },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("run already finished")]
    Finished,
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub rule_compliance: BTreeMap<RuleId, f64>,
    pub base_competence: BTreeMap<TaskKind, f64>,
    pub version: u64,
}

impl Default for PolicyState {
    fn default() -> Self {
        PolicyState::uniform(0.15, 0.15, 0.6)
    }
}

impl PolicyState {
    pub fn uniform(compliance: f64, file_check: f64, multi_choice: f64) -> Self {
        PolicyState {
            rule_compliance: RuleId::ALL.iter().map(|r| (*r, compliance)).collect(),
            base_competence: [(TaskKind::FileCheck, file_check), (TaskKind::MultiChoice, multi_choice)].into(),
            version: 0,
        }
    }

    pub fn compliance(&self, rule: RuleId) -> f64 {
        self.rule_compliance.get(&rule).copied().unwrap_or(0.0)
    }

    pub fn competence(&self, kind: TaskKind) -> f64 {
        self.base_competence.get(&kind).copied().unwrap_or(0.0)
    }

    /// Same parameters, stamped as the next version.
    pub fn successor_of(mut self, base: &PolicyState) -> Self {
        self.version = base.version + 1;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.rule_compliance.values().chain(self.base_competence.values()).all(|p| (0.0..=1.0).contains(p))
    }
}

/// Process reward for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub value: f64,
    pub components: BTreeMap<String, bool>,
    pub feedback: String,
}

impl RewardScore {
    pub fn violated_rules(&self) -> impl Iterator<Item = RuleId> + '_ {
        violated_rules(&self.components)
    }
}

fn violated_rules(components: &BTreeMap<String, bool>) -> impl Iterator<Item = RuleId> + '_ {
    components.iter().filter(|(_, ok)| !**ok).filter_map(|(k, _)| k.parse().ok())
}

fn file_score(check: CheckResult) -> RewardScore {
    let mut components: BTreeMap<String, bool> =
        check.per_rule.iter().map(|(r, ok)| (r.to_string(), *ok)).collect();
    components.insert("output".into(), check.output_path.is_some());
    RewardScore { value: if check.passed { 1.0 } else { 0.0 }, components, feedback: check.feedback }
}

fn last_answer(traj: &Trajectory) -> String {
    traj.actions
        .iter()
        .rev()
        .find_map(|s| match FileOp::parse(&s.action) {
            Ok(FileOp::Answer(text)) => Some(text),
            _ => None,
        })
        .unwrap_or_default()
}

fn choice_score(traj: &Trajectory, task: &TaskSpec) -> Result<RewardScore, TrainerError> {
    let truth = task.truth.as_ref().ok_or_else(|| TrainerError::UnknownTask(task.id.clone()))?;
    let predicted = parse_options(&last_answer(traj));
    let value = score_multichoice(&truth.correct, &predicted, truth.n_options)?;
    let mut components: BTreeMap<String, bool> = (0..truth.n_options)
        .map(crate::simbench::option_label)
        .map(|l| {
            let ok = truth.correct.contains(&l) == predicted.contains(&l);
            (format!("opt:{l}"), ok)
        })
        .collect();
    let exact = value >= 1.0;
    if let Some(topic) = task.topic() {
        components.insert(topic.to_string(), exact);
    }
    let feedback = if exact { String::new() } else { task.feedback_on_fail.clone() };
    Ok(RewardScore { value, components, feedback })
}

/// Scores a trajectory against a workspace its actions were applied to.
pub fn score_in(traj: &Trajectory, task: &TaskSpec, ws: &Workspace) -> Result<RewardScore, TrainerError> {
    if traj.task_id != task.id {
        return Err(TrainerError::UnknownTask(traj.task_id.clone()));
    }
    match task.kind {
        TaskKind::FileCheck => match check_file(task, ws) {
            Ok(check) => Ok(file_score(check)),
            Err(SimError::MissingOutput(_)) => Ok(file_score(CheckResult::missing(task))),
            Err(e) => Err(e.into()),
        },
        TaskKind::MultiChoice => choice_score(traj, task),
    }
}

/// Scores a trajectory in a fresh workspace holding only the task's inputs.
pub fn score(traj: &Trajectory, task: &TaskSpec) -> Result<RewardScore, TrainerError> {
    let mut ws = Workspace::new();
    ws.begin_task(task);
    ws.apply_steps(&traj.actions)?;
    score_in(traj, task, &ws)
}

/// Registry-backed scorer.
#[derive(Debug, Clone, Default)]
pub struct Scorer {
    tasks: HashMap<String, TaskSpec>,
}

impl Scorer {
    pub fn new(tasks: impl IntoIterator<Item = TaskSpec>) -> Self {
        Scorer { tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect() }
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.get(id)
    }

    pub fn score(&self, traj: &Trajectory) -> Result<RewardScore, TrainerError> {
        let task = self.task(&traj.task_id).ok_or_else(|| TrainerError::UnknownTask(traj.task_id.clone()))?;
        score(traj, task)
    }
}

/// Per-batch sufficient statistics, built one trajectory at a time so a
/// batch can be interrupted and resumed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    violated: BTreeSet<RuleId>,
    rewards: BTreeMap<TaskKind, (f64, u32)>,
}

impl Accumulator {
    pub fn observe(&mut self, traj: &Trajectory) -> Result<(), TrainerError> {
        if traj.role != Some(Role::Query) {
            return Err(TrainerError::RoleViolation(traj.task_id.clone()));
        }
        self.violated.extend(violated_rules(&traj.components));
        let entry = self.rewards.entry(traj.kind).or_insert((0.0, 0));
        entry.0 += traj.reward;
        entry.1 += 1;
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn violated(&self) -> &BTreeSet<RuleId> {
        &self.violated
    }

    pub fn mean_reward(&self) -> f64 {
        let (sum, n) = self.rewards.values().fold((0.0, 0), |(s, n), (rs, rn)| (s + rs, n + rn));
        if n == 0 {
            0.0
        } else {
            sum / f64::from(n)
        }
    }

    pub fn apply(&self, theta: &PolicyState, alpha: f64) -> PolicyState {
        let mut next = theta.clone();
        for rule in &self.violated {
            let c = next.rule_compliance.entry(*rule).or_insert(0.0);
            *c = (*c + alpha * (1.0 - *c)).clamp(0.0, 1.0);
        }
        for (kind, (sum, n)) in &self.rewards {
            let target = sum / f64::from(*n);
            let b = next.base_competence.entry(*kind).or_insert(0.0);
            *b = (*b + alpha * target * (1.0 - *b)).clamp(0.0, 1.0);
        }
        next
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<(), TrainerError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(TrainerError::InvalidAlpha(alpha))
    }
}

/// One surrogate optimization step over a query batch.
pub fn sim_update(theta: &PolicyState, batch: &[Trajectory], alpha: f64) -> Result<PolicyState, TrainerError> {
    if batch.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    check_alpha(alpha)?;
    let mut acc = Accumulator::default();
    for traj in batch {
        acc.observe(traj)?;
    }
    Ok(acc.apply(theta, alpha))
}
