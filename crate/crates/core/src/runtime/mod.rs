//! The adaptation loop: serve, score, route, evolve, and train in idle
//! windows, all on a virtual clock so a session is a pure function of its
//! configuration.

mod config;
mod driver;
mod events;
mod replay;
mod session;

use thiserror::Error;

pub use config::{Condition, EvolverSpec, Paths, RuntimeConfig, Workday, ENV_PREFIX};
pub use driver::{replay_trace, SimTrainer, TickDriver, TickInputs, TraceReplay};
pub use events::{events_to_string, read_events, write_events, Event};
pub use replay::{check_invariants, scores_from_events, ReplaySummary, Violation};
pub use session::{
    compare_conditions, run_session, run_session_with_client, write_report, Comparison, ConditionSummary, Deltas,
    FlushRecord, GrowthPoint, Session, SessionReport, TaskRecord, TrainingRecord,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed event log at line {line}: {reason}")]
    EventLog { line: usize, reason: String },
    #[error("session incomplete: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Skill(#[from] crate::skill_store::SkillError),
    #[error(transparent)]
    Evolution(#[from] crate::evolution::EvolutionError),
    #[error(transparent)]
    Buffer(#[from] crate::buffer::BufferError),
    #[error(transparent)]
    Scheduler(#[from] crate::scheduler::SchedulerError),
    #[error(transparent)]
    Trainer(#[from] crate::trainer::TrainerError),
    #[error(transparent)]
    Sim(#[from] crate::simbench::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
