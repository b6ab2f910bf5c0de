//! Scheduler tick handling in virtual time, shared by the session loop and
//! the trace-replay harness.

use chrono::{DateTime, Duration, Utc};

use super::events::Event;
use super::RuntimeError;
use crate::scheduler::{
    decide, Command, Omls, SchedulerConfig, SchedulerError, SignalSource, TickContext, TrainerCheckpoint,
    TrainerHandle, TrainerStatus, WindowDecision,
};
use crate::trainer::{PolicyState, StepOutcome, TrainRun, TrainerError};

/// In-process trainer: the run lives here and is stepped by the driver.
#[derive(Debug, Default)]
pub struct SimTrainer {
    run: Option<TrainRun>,
    prepared: Option<TrainRun>,
}

impl SimTrainer {
    pub fn run(&self) -> Option<&TrainRun> {
        self.run.as_ref()
    }
}

impl TrainerHandle for SimTrainer {
    fn start(&mut self) -> Result<(), SchedulerError> {
        self.run = Some(self.prepared.take().ok_or_else(|| SchedulerError::TrainerGone("no run planned".into()))?);
        Ok(())
    }

    fn pause(&mut self) -> Result<TrainerCheckpoint, SchedulerError> {
        self.run
            .as_mut()
            .map(TrainRun::checkpoint)
            .ok_or_else(|| SchedulerError::TrainerGone("no run to pause".into()))
    }

    fn resume(&mut self, checkpoint: TrainerCheckpoint) -> Result<(), SchedulerError> {
        let run = self.run.as_mut().ok_or_else(|| SchedulerError::TrainerGone("no run to resume".into()))?;
        run.restore(&checkpoint).map_err(|e| SchedulerError::TrainerGone(e.to_string()))
    }

    fn discard(&mut self) {
        self.run = None;
    }
}

/// Inputs the driver needs from its owner on every tick.
pub struct TickInputs<'a> {
    pub ctx: TickContext,
    /// Training steps allowed in this tick, one per simulated second.
    pub budget: u64,
    pub planner: &'a mut dyn FnMut(u64) -> Result<TrainRun, TrainerError>,
}

#[derive(Debug, Default)]
pub struct TickDriver {
    omls: Omls,
    trainer: SimTrainer,
    runs_started: u64,
    steps_taken: u64,
}

impl TickDriver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn omls(&self) -> &Omls {
        &self.omls
    }

    pub fn trainer(&self) -> &SimTrainer {
        &self.trainer
    }

    pub fn runs_started(&self) -> u64 {
        self.runs_started
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    fn wants_new_run(&self, ctx: &TickContext) -> bool {
        let free = match self.omls.status() {
            TrainerStatus::Idle => true,
            TrainerStatus::Paused(c) => c.generation != ctx.generation,
            TrainerStatus::Running => false,
        };
        free && ctx.train_ready && ctx.pending_work
    }

    /// Processes one tick at `at`. Returns the trained policy if a run
    /// finished during this tick's steps, with the instant it finished.
    pub fn tick(
        &mut self,
        at: DateTime<Utc>,
        decision: &WindowDecision,
        inputs: TickInputs<'_>,
        events: &mut Vec<Event>,
    ) -> Result<Option<(DateTime<Utc>, PolicyState)>, RuntimeError> {
        let TickInputs { ctx, budget, planner } = inputs;
        if decision.open != self.omls.window_open() {
            events.push(Event::Window {
                at,
                open: decision.open,
                reasons: decision.reasons.iter().copied().collect(),
                closed_by: decision.closed_by,
            });
        }
        if decision.open && self.wants_new_run(&ctx) {
            self.trainer.prepared = Some(planner(self.runs_started)?);
        }
        let command = self.omls.on_tick(decision, ctx, &mut self.trainer)?;
        self.trainer.prepared = None;
        if let Some(info) = self.omls.take_discarded() {
            events.push(Event::TrainDiscard {
                at,
                batch_index: info.batch_index,
                step_within_batch: info.step_within_batch,
                generation: info.generation,
            });
        }
        match command {
            Command::Start => {
                let run = self.trainer.run.as_ref().expect("started run present");
                events.push(Event::TrainStart {
                    at,
                    run: self.runs_started,
                    generation: run.source_generation,
                    batches: run.batches_total,
                    steps_total: run.steps_total(),
                });
                self.runs_started += 1;
            }
            Command::Pause(info) => events.push(Event::TrainPause {
                at,
                batch_index: info.batch_index,
                step_within_batch: info.step_within_batch,
            }),
            Command::Resume(info) => events.push(Event::TrainResume {
                at,
                batch_index: info.batch_index,
                step_within_batch: info.step_within_batch,
            }),
            Command::Noop => {}
        }
        if !self.omls.is_running() || budget == 0 {
            return Ok(None);
        }
        self.run_steps(at, ctx.generation, budget, events)
    }

    fn run_steps(
        &mut self,
        at: DateTime<Utc>,
        generation: u64,
        budget: u64,
        events: &mut Vec<Event>,
    ) -> Result<Option<(DateTime<Utc>, PolicyState)>, RuntimeError> {
        let run = self.trainer.run.as_mut().expect("running trainer has a run");
        let mut batch_events = Vec::new();
        let mut count = 0u64;
        let mut finished = None;
        let mut failure = None;
        while count < budget {
            let now = at + Duration::seconds(count as i64);
            match run.step(generation, now) {
                Ok(outcome) => {
                    count += 1;
                    match outcome {
                        StepOutcome::Stepped => {}
                        StepOutcome::BatchDone(log) | StepOutcome::Finished(log) => {
                            batch_events.push(Event::BatchDone {
                                at: now,
                                batch_index: log.batch_index,
                                mean_reward: log.mean_reward,
                                updated_rules: log.updated_rules,
                                generation: log.generation,
                            });
                        }
                    }
                    if run.is_finished() {
                        finished = Some(now);
                        break;
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        self.steps_taken += count;
        if count > 0 {
            events.push(Event::TrainSteps {
                at,
                count: count as usize,
                batch_index: run.batches_done,
                step_within_batch: run.step_within_batch(),
            });
        }
        events.extend(batch_events);
        if let Some(err) = failure {
            let ckpt = run.checkpoint();
            events.push(Event::TrainDiscard {
                at: at + Duration::seconds(count as i64),
                batch_index: ckpt.batch_index,
                step_within_batch: ckpt.step_within_batch,
                generation: ckpt.generation,
            });
            self.trainer.run = None;
            self.omls.on_run_finished();
            return match err {
                TrainerError::StaleGeneration { .. } => Ok(None),
                other => Err(other.into()),
            };
        }
        if let Some(done_at) = finished {
            let theta = self.trainer.run.take().expect("finished run present").into_theta();
            self.omls.on_run_finished();
            return Ok(Some((done_at, theta)));
        }
        Ok(None)
    }
}

/// Result of driving one training run through a recorded signal trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceReplay {
    pub events: Vec<Event>,
    /// Timestamp of every training step, in order.
    pub step_times: Vec<DateTime<Utc>>,
    /// Half-open open intervals as decided at ticks.
    pub open_intervals: Vec<(DateTime<Utc>, DateTime<Utc>)>,
    pub finished: Option<PolicyState>,
    pub pauses: usize,
}

/// Ticks from `from` to `until` over `signals`, training `run` whenever the
/// scheduler allows.
pub fn replay_trace(
    signals: &mut SignalSource,
    config: &SchedulerConfig,
    from: DateTime<Utc>,
    until: DateTime<Utc>,
    run: TrainRun,
) -> Result<TraceReplay, RuntimeError> {
    let tick = Duration::seconds(config.tick_seconds as i64);
    let generation = run.source_generation;
    let mut template = Some(run);
    let mut driver = TickDriver::new();
    let mut events = Vec::new();
    let mut finished = None;
    let mut at = from;
    let mut open_since: Option<DateTime<Utc>> = None;
    let mut open_intervals = Vec::new();
    while at < until {
        let decision = decide(&signals.sample(at)?, config);
        match (decision.open, open_since) {
            (true, None) => open_since = Some(at),
            (false, Some(start)) => {
                open_intervals.push((start, at));
                open_since = None;
            }
            _ => {}
        }
        let mut planner = |_: u64| template.take().ok_or(TrainerError::Finished);
        let ctx = TickContext { train_ready: true, pending_work: finished.is_none(), generation };
        let budget = (until - at).num_seconds().min(tick.num_seconds()).max(0) as u64;
        if let Some((_, theta)) = driver.tick(at, &decision, TickInputs { ctx, budget, planner: &mut planner }, &mut events)? {
            finished = Some(theta);
        }
        at += tick;
    }
    if let Some(start) = open_since {
        open_intervals.push((start, until));
    }
    let step_times = events
        .iter()
        .filter_map(|e| match e {
            Event::TrainSteps { at, count, .. } => Some((0..*count).map(move |i| *at + Duration::seconds(i as i64))),
            _ => None,
        })
        .flatten()
        .collect();
    let pauses = events.iter().filter(|e| matches!(e, Event::TrainPause { .. })).count();
    Ok(TraceReplay { events, step_times, open_intervals, finished, pauses })
}
