use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{check_alpha, Accumulator, PolicyState, TrainerError};
use crate::buffer::{RlBuffer, Trajectory};
use crate::rules::RuleId;
use crate::scheduler::TrainerCheckpoint;
use crate::simbench::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Training log line, one per finished batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub batch_index: usize,
    pub mean_reward: f64,
    pub updated_rules: Vec<RuleId>,
    pub generation: u64,
    pub wall_clock: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Stepped,
    BatchDone(BatchLog),
    Finished(BatchLog),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed(PolicyState),
    Paused(TrainerCheckpoint),
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    theta: PolicyState,
    accumulator: Accumulator,
}

/// A planned sequence of batches over a private copy of the policy. One
/// step consumes one trajectory; the update lands on a batch's last step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub batches_total: usize,
    pub batches_done: usize,
    pub learning_rate: f64,
    pub checkpoint: Option<TrainerCheckpoint>,
    pub source_generation: u64,
    plan: Vec<Vec<Trajectory>>,
    theta: PolicyState,
    step_within_batch: usize,
    acc: Accumulator,
}

impl TrainRun {
    pub fn new(plan: Vec<Vec<Trajectory>>, theta: PolicyState, alpha: f64, source_generation: u64) -> Result<Self, TrainerError> {
        check_alpha(alpha)?;
        if alpha == 0.0 {
            return Err(TrainerError::InvalidAlpha(alpha));
        }
        if plan.is_empty() || plan.iter().any(Vec::is_empty) {
            return Err(TrainerError::EmptyBatch);
        }
        Ok(TrainRun {
            batches_total: plan.len(),
            batches_done: 0,
            learning_rate: alpha,
            checkpoint: None,
            source_generation,
            plan,
            theta,
            step_within_batch: 0,
            acc: Accumulator::default(),
        })
    }

    /// Samples every batch up front; batch `b` uses seed `derive(seed, b)`.
    pub fn plan(buffer: &RlBuffer, generation: u64, theta: PolicyState, cfg: &RunConfig) -> Result<Self, TrainerError> {
        let plan = (0..cfg.batches)
            .map(|b| buffer.sample_batch(cfg.batch_size, derive_seed(cfg.seed, b as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        TrainRun::new(plan, theta, cfg.alpha, generation)
    }

    pub fn theta(&self) -> &PolicyState {
        &self.theta
    }

    pub fn is_finished(&self) -> bool {
        self.batches_done == self.batches_total
    }

    pub fn step_within_batch(&self) -> usize {
        self.step_within_batch
    }

    pub fn steps_total(&self) -> usize {
        self.plan.iter().map(Vec::len).sum()
    }

    pub fn steps_done(&self) -> usize {
        self.plan[..self.batches_done].iter().map(Vec::len).sum::<usize>() + self.step_within_batch
    }

    pub fn step(&mut self, current_generation: u64, now: DateTime<Utc>) -> Result<StepOutcome, TrainerError> {
        if current_generation != self.source_generation {
            return Err(TrainerError::StaleGeneration { run: self.source_generation, current: current_generation });
        }
        if self.is_finished() {
            return Err(TrainerError::Finished);
        }
        let batch = &self.plan[self.batches_done];
        self.acc.observe(&batch[self.step_within_batch])?;
        self.step_within_batch += 1;
        if self.step_within_batch < batch.len() {
            return Ok(StepOutcome::Stepped);
        }
        self.theta = self.acc.apply(&self.theta, self.learning_rate);
        let log = BatchLog {
            batch_index: self.batches_done,
            mean_reward: self.acc.mean_reward(),
            updated_rules: self.acc.violated().iter().copied().collect(),
            generation: self.source_generation,
            wall_clock: now,
        };
        self.acc = Accumulator::default();
        self.step_within_batch = 0;
        self.batches_done += 1;
        Ok(if self.is_finished() { StepOutcome::Finished(log) } else { StepOutcome::BatchDone(log) })
    }

    /// Captures the run position and partial policy; also kept on the run.
    pub fn checkpoint(&mut self) -> TrainerCheckpoint {
        let state = SavedState { theta: self.theta.clone(), accumulator: self.acc.clone() };
        let ckpt = TrainerCheckpoint {
            batch_index: self.batches_done,
            step_within_batch: self.step_within_batch,
            accumulated_state: serde_json::to_vec(&state).expect("policy state serializes"),
            generation: self.source_generation,
        };
        self.checkpoint = Some(ckpt.clone());
        ckpt
    }

    /// Rewinds or fast-forwards this run's plan to `ckpt`.
    pub fn restore(&mut self, ckpt: &TrainerCheckpoint) -> Result<(), TrainerError> {
        if ckpt.generation != self.source_generation {
            return Err(TrainerError::StaleGeneration { run: self.source_generation, current: ckpt.generation });
        }
        let in_range = ckpt.batch_index < self.batches_total && ckpt.step_within_batch < self.plan[ckpt.batch_index].len()
            || ckpt.batch_index == self.batches_total && ckpt.step_within_batch == 0;
        if !in_range {
            return Err(TrainerError::BadCheckpoint(format!(
                "position {}/{} outside the plan",
                ckpt.batch_index, ckpt.step_within_batch
            )));
        }
        let state: SavedState = serde_json::from_slice(&ckpt.accumulated_state)
            .map_err(|e| TrainerError::BadCheckpoint(e.to_string()))?;
        self.theta = state.theta;
        self.acc = state.accumulator;
        self.batches_done = ckpt.batch_index;
        self.step_within_batch = ckpt.step_within_batch;
        self.checkpoint = Some(ckpt.clone());
        Ok(())
    }

    pub fn into_theta(self) -> PolicyState {
        self.theta
    }
}

/// Cooperative pause flag checked between steps.
#[derive(Debug, Clone, Default)]
pub struct PauseSignal(Arc<AtomicBool>);

impl PauseSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn clear(&self) {
        self.0.store(false, Ordering::SeqCst);
    }

    pub fn is_requested(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Steps `run` until it finishes or a pause is requested. `generation`
/// reports the live library generation and `clock` stamps batch logs.
pub fn run_batches(
    run: &mut TrainRun,
    generation: &dyn Fn() -> u64,
    pause: &PauseSignal,
    clock: &dyn Fn() -> DateTime<Utc>,
    mut on_batch: impl FnMut(&BatchLog),
) -> Result<RunOutcome, TrainerError> {
    loop {
        if run.is_finished() {
            return Ok(RunOutcome::Completed(run.theta.clone()));
        }
        if pause.is_requested() {
            return Ok(RunOutcome::Paused(run.checkpoint()));
        }
        match run.step(generation(), clock())? {
            StepOutcome::Stepped => {}
            StepOutcome::BatchDone(log) | StepOutcome::Finished(log) => on_batch(&log),
        }
    }
}
