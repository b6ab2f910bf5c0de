use serde::{Deserialize, Serialize};

use super::{SchedulerError, TrainerCheckpoint, WindowDecision};

/// Side of the command channel the scheduler talks to.
pub trait TrainerHandle {
    fn start(&mut self) -> Result<(), SchedulerError>;
    /// Asks the trainer to stop at the next step boundary and hand back its
    /// checkpoint. Fails with `TrainerUnresponsive` after the grace period.
    fn pause(&mut self) -> Result<TrainerCheckpoint, SchedulerError>;
    fn resume(&mut self, checkpoint: TrainerCheckpoint) -> Result<(), SchedulerError>;
    /// Drops any partial run.
    fn discard(&mut self);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub batch_index: usize,
    pub step_within_batch: usize,
    pub generation: u64,
}

impl From<&TrainerCheckpoint> for CheckpointInfo {
    fn from(c: &TrainerCheckpoint) -> Self {
        CheckpointInfo {
            batch_index: c.batch_index,
            step_within_batch: c.step_within_batch,
            generation: c.generation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Start,
    Pause(CheckpointInfo),
    Resume(CheckpointInfo),
    Noop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainerStatus {
    Idle,
    Running,
    Paused(TrainerCheckpoint),
}

#[derive(Debug, Clone, Copy)]
pub struct TickContext {
    pub train_ready: bool,
    /// Enough new query data arrived since the last completed run.
    pub pending_work: bool,
    pub generation: u64,
}

/// The scheduler's view of the trainer across ticks.
#[derive(Debug)]
pub struct Omls {
    window_open: bool,
    status: TrainerStatus,
    discarded: Option<CheckpointInfo>,
}

impl Default for Omls {
    fn default() -> Self {
        Omls { window_open: false, status: TrainerStatus::Idle, discarded: None }
    }
}

impl Omls {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn window_open(&self) -> bool {
        self.window_open
    }

    pub fn status(&self) -> &TrainerStatus {
        &self.status
    }

    pub fn is_running(&self) -> bool {
        matches!(self.status, TrainerStatus::Running)
    }

    /// Checkpoint thrown away on the last tick because it predated the
    /// current skill generation.
    pub fn take_discarded(&mut self) -> Option<CheckpointInfo> {
        self.discarded.take()
    }

    /// The trainer finished (or aborted) its run.
    pub fn on_run_finished(&mut self) {
        self.status = TrainerStatus::Idle;
    }

    pub fn on_tick(
        &mut self,
        decision: &WindowDecision,
        ctx: TickContext,
        trainer: &mut dyn TrainerHandle,
    ) -> Result<Command, SchedulerError> {
        self.window_open = decision.open;
        if !decision.open {
            if self.is_running() {
                let checkpoint = trainer.pause()?;
                let info = CheckpointInfo::from(&checkpoint);
                self.status = TrainerStatus::Paused(checkpoint);
                return Ok(Command::Pause(info));
            }
            return Ok(Command::Noop);
        }
        match std::mem::replace(&mut self.status, TrainerStatus::Idle) {
            TrainerStatus::Running => {
                self.status = TrainerStatus::Running;
                Ok(Command::Noop)
            }
            TrainerStatus::Paused(checkpoint) if checkpoint.generation == ctx.generation => {
                let info = CheckpointInfo::from(&checkpoint);
                trainer.resume(checkpoint)?;
                self.status = TrainerStatus::Running;
                Ok(Command::Resume(info))
            }
            TrainerStatus::Paused(stale) => {
                self.discarded = Some(CheckpointInfo::from(&stale));
                trainer.discard();
                self.maybe_start(ctx, trainer)
            }
            TrainerStatus::Idle => self.maybe_start(ctx, trainer),
        }
    }

    fn maybe_start(&mut self, ctx: TickContext, trainer: &mut dyn TrainerHandle) -> Result<Command, SchedulerError> {
        if ctx.train_ready && ctx.pending_work {
            trainer.start()?;
            self.status = TrainerStatus::Running;
            Ok(Command::Start)
        } else {
            Ok(Command::Noop)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::Signal;
    use std::collections::BTreeSet;

    #[derive(Default)]
    struct Recorder {
        calls: Vec<String>,
        batch_index: usize,
        step: usize,
        generation: u64,
        unresponsive: bool,
    }

    impl TrainerHandle for Recorder {
        fn start(&mut self) -> Result<(), SchedulerError> {
            self.calls.push("start".into());
            Ok(())
        }
        fn pause(&mut self) -> Result<TrainerCheckpoint, SchedulerError> {
            if self.unresponsive {
                return Err(SchedulerError::TrainerUnresponsive(10));
            }
            self.calls.push("pause".into());
            Ok(TrainerCheckpoint {
                batch_index: self.batch_index,
                step_within_batch: self.step,
                accumulated_state: vec![],
                generation: self.generation,
            })
        }
        fn resume(&mut self, c: TrainerCheckpoint) -> Result<(), SchedulerError> {
            self.calls.push(format!("resume {} {}", c.batch_index, c.step_within_batch));
            Ok(())
        }
        fn discard(&mut self) {
            self.calls.push("discard".into());
        }
    }

    fn open() -> WindowDecision {
        WindowDecision { open: true, reasons: BTreeSet::from([Signal::Sleep]), closed_by: None }
    }

    fn closed() -> WindowDecision {
        WindowDecision { open: false, reasons: BTreeSet::new(), closed_by: Some(Signal::Inactivity) }
    }

    fn ctx(ready: bool, generation: u64) -> TickContext {
        TickContext { train_ready: ready, pending_work: ready, generation }
    }

    #[test]
    fn open_without_data_is_noop() {
        let mut omls = Omls::new();
        let mut t = Recorder::default();
        assert_eq!(omls.on_tick(&open(), ctx(false, 0), &mut t).unwrap(), Command::Noop);
        assert!(t.calls.is_empty());
    }

    #[test]
    fn start_pause_resume_cycle() {
        let mut omls = Omls::new();
        let mut t = Recorder { batch_index: 2, step: 3, ..Default::default() };
        assert_eq!(omls.on_tick(&open(), ctx(true, 0), &mut t).unwrap(), Command::Start);
        assert_eq!(omls.on_tick(&open(), ctx(true, 0), &mut t).unwrap(), Command::Noop);
        let info = CheckpointInfo { batch_index: 2, step_within_batch: 3, generation: 0 };
        assert_eq!(omls.on_tick(&closed(), ctx(true, 0), &mut t).unwrap(), Command::Pause(info));
        assert_eq!(omls.on_tick(&closed(), ctx(true, 0), &mut t).unwrap(), Command::Noop);
        assert_eq!(omls.on_tick(&open(), ctx(false, 0), &mut t).unwrap(), Command::Resume(info));
        assert_eq!(t.calls, ["start", "pause", "resume 2 3"]);
    }

    #[test]
    fn stale_checkpoint_is_discarded_and_restarted() {
        let mut omls = Omls::new();
        let mut t = Recorder::default();
        omls.on_tick(&open(), ctx(true, 0), &mut t).unwrap();
        omls.on_tick(&closed(), ctx(true, 0), &mut t).unwrap();
        assert_eq!(omls.on_tick(&open(), ctx(true, 1), &mut t).unwrap(), Command::Start);
        assert_eq!(omls.take_discarded().map(|c| c.generation), Some(0));
        assert_eq!(t.calls, ["start", "pause", "discard", "start"]);
    }

    #[test]
    fn unresponsive_trainer_surfaces() {
        let mut omls = Omls::new();
        let mut t = Recorder::default();
        omls.on_tick(&open(), ctx(true, 0), &mut t).unwrap();
        t.unresponsive = true;
        assert!(matches!(
            omls.on_tick(&closed(), ctx(true, 0), &mut t),
            Err(SchedulerError::TrainerUnresponsive(_))
        ));
    }

    #[test]
    fn completion_returns_to_idle() {
        let mut omls = Omls::new();
        let mut t = Recorder::default();
        omls.on_tick(&open(), ctx(true, 0), &mut t).unwrap();
        omls.on_run_finished();
        assert_eq!(omls.on_tick(&closed(), ctx(true, 0), &mut t).unwrap(), Command::Noop);
    }
}
