//! Offline re-check of a session event log.

use std::collections::{BTreeSet, VecDeque};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::events::Event;
use crate::buffer::{FlushMode, Route};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Zero-based index of the offending event.
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub tasks: usize,
    pub evolutions: usize,
    pub flushes: usize,
    pub hot_swaps: usize,
    pub train_steps: usize,
    pub final_generation: u64,
    pub final_buffer_len: usize,
    pub skills: Vec<String>,
}

#[derive(Default)]
struct State {
    mode: FlushMode,
    capacity: Option<usize>,
    buffer: VecDeque<(String, u64)>,
    support: BTreeSet<String>,
    generation: u64,
    skills: BTreeSet<String>,
    window_open: bool,
    running: bool,
    steps_end: Option<DateTime<Utc>>,
    policy_version: u64,
    open_task: Option<(String, u64)>,
    last_at: Option<DateTime<Utc>>,
}

struct Checker {
    state: State,
    summary: ReplaySummary,
    violations: Vec<Violation>,
    index: usize,
}

impl Checker {
    fn fail(&mut self, message: impl Into<String>) {
        self.violations.push(Violation { index: self.index, message: message.into() });
    }

    fn min_generation(&self) -> Option<u64> {
        self.state.buffer.iter().map(|(_, g)| *g).min()
    }

    fn check(&mut self, event: &Event) {
        let at = event.at();
        if self.state.last_at.is_some_and(|last| at < last) {
            self.fail(format!("{} goes back in time", event.name()));
        }
        self.state.last_at = Some(at);
        if self.state.open_task.is_some() && !matches!(event, Event::TaskServed { .. }) {
            self.fail(format!("{} between a task's retrieval and its scoring", event.name()));
        }
        if event.is_training() && !matches!(event, Event::TrainPause { .. } | Event::TrainDiscard { .. }) && !self.state.window_open {
            self.fail(format!("{} outside an open window", event.name()));
        }
        match event {
            Event::SessionStart { flush_mode, buffer_capacity, .. } => {
                self.state.mode = *flush_mode;
                self.state.capacity = *buffer_capacity;
            }
            Event::Window { open, .. } => {
                if *open == self.state.window_open {
                    self.fail("window event without a state change");
                }
                if !open && self.state.steps_end.is_some_and(|end| end > at) {
                    self.fail("training steps run past the window close");
                }
                if !open && self.state.running {
                    self.fail("window closed while the trainer was still running");
                }
                self.state.window_open = *open;
            }
            Event::TrainStart { generation, .. } => {
                if self.state.running {
                    self.fail("second run started while one is running");
                }
                if *generation != self.state.generation {
                    self.fail("run planned under a stale generation");
                }
                self.state.running = true;
            }
            Event::TrainResume { .. } => {
                if self.state.running {
                    self.fail("resume while running");
                }
                self.state.running = true;
            }
            Event::TrainPause { .. } => {
                if !self.state.running {
                    self.fail("pause while not running");
                }
                self.state.running = false;
            }
            Event::TrainDiscard { .. } => self.state.running = false,
            Event::TrainSteps { count, .. } => {
                if !self.state.running {
                    self.fail("steps while the trainer is not running");
                }
                let end = at + Duration::seconds(*count as i64);
                if self.state.steps_end.is_some_and(|prev| prev > at) {
                    self.fail("overlapping training steps");
                }
                self.state.steps_end = Some(end);
                self.summary.train_steps += count;
            }
            Event::BatchDone { generation, .. } => {
                if *generation != self.state.generation {
                    self.fail("batch finished under a stale generation");
                }
            }
            Event::HotSwap { version, .. } => {
                if *version != self.state.policy_version + 1 {
                    self.fail(format!("hot swap to v{version} from v{}", self.state.policy_version));
                }
                self.state.policy_version = *version;
                self.state.running = false;
                self.summary.hot_swaps += 1;
            }
            Event::TaskStart { task_id, generation, policy_version, .. } => {
                if *generation != self.state.generation {
                    self.fail("task served under a stale generation");
                }
                if *policy_version != self.state.policy_version {
                    self.fail("task served with a policy other than the installed one");
                }
                self.state.open_task = Some((task_id.clone(), *policy_version));
            }
            Event::TaskServed { task_id, route, generation, policy_version, buffer_len, min_generation, .. } => {
                match self.state.open_task.take() {
                    Some((id, v)) if id == *task_id && v == *policy_version => {}
                    _ => self.fail(format!("{task_id} scored without a matching start")),
                }
                self.summary.tasks += 1;
                match route {
                    Some(Route::ToQuery) => {
                        self.state.buffer.push_back((task_id.clone(), *generation));
                        if let Some(cap) = self.state.capacity {
                            while self.state.buffer.len() > cap {
                                self.state.buffer.pop_front();
                            }
                        }
                    }
                    Some(Route::ToSupport) => {
                        self.state.support.insert(task_id.clone());
                    }
                    None => {}
                }
                if self.state.buffer.iter().any(|(id, _)| self.state.support.contains(id)) {
                    self.fail("support trajectory present in the training buffer");
                }
                if *buffer_len != self.state.buffer.len() || *min_generation != self.min_generation() {
                    self.fail(format!(
                        "buffer mismatch after {task_id}: logged {buffer_len}/{min_generation:?}, replayed {}/{:?}",
                        self.state.buffer.len(),
                        self.min_generation()
                    ));
                }
            }
            Event::Evolution { from_generation, to_generation, added, .. } => {
                if *from_generation != self.state.generation || *to_generation != from_generation + 1 {
                    self.fail(format!("generation jump {from_generation} -> {to_generation}"));
                }
                for name in added {
                    if !self.state.skills.insert(name.clone()) {
                        self.fail(format!("skill {name} added twice"));
                    }
                }
                self.state.generation = *to_generation;
                self.state.support.clear();
                self.summary.evolutions += 1;
            }
            Event::Flush { generation, flushed, buffer_len, min_generation, .. } => {
                let before = self.state.buffer.len();
                if self.state.mode == FlushMode::Algorithm1 {
                    self.state.buffer.retain(|(_, g)| g > generation);
                }
                let removed = before - self.state.buffer.len();
                if removed != *flushed || *buffer_len != self.state.buffer.len() || *min_generation != self.min_generation() {
                    self.fail(format!("flush of g{generation} logged {flushed} removed, replay removed {removed}"));
                }
                if self.state.mode == FlushMode::Algorithm1 && self.min_generation().is_some_and(|g| g <= *generation) {
                    self.fail("stale samples survived a flush");
                }
                self.summary.flushes += 1;
            }
            Event::DayEnd { generation, library_size, policy_version, .. } => {
                if *generation != self.state.generation
                    || *library_size != self.state.skills.len()
                    || *policy_version != self.state.policy_version
                {
                    self.fail("day summary disagrees with replayed state");
                }
            }
            Event::SessionEnd { .. } => {}
        }
    }
}

/// Replays `events` and checks every runtime invariant. Returns the
/// summary, or every violation found.
pub fn check_invariants(events: &[Event]) -> Result<ReplaySummary, Vec<Violation>> {
    let mut checker = Checker { state: State::default(), summary: ReplaySummary::default(), violations: Vec::new(), index: 0 };
    if !matches!(events.first(), Some(Event::SessionStart { .. })) {
        checker.fail("log does not begin with session_start");
    }
    for (i, event) in events.iter().enumerate() {
        checker.index = i;
        checker.check(event);
    }
    if checker.violations.is_empty() {
        let mut summary = checker.summary;
        summary.final_generation = checker.state.generation;
        summary.final_buffer_len = checker.state.buffer.len();
        summary.skills = checker.state.skills.into_iter().collect();
        Ok(summary)
    } else {
        Err(checker.violations)
    }
}

/// Per-task scores recorded in a log, for re-aggregation.
pub fn scores_from_events(events: &[Event]) -> Vec<crate::simbench::ScoredTask> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::TaskServed { task_id, day, round, kind, value, .. } => Some(crate::simbench::ScoredTask {
                task_id: task_id.clone(),
                day_index: *day,
                round_index: *round,
                kind: *kind,
                value: *value,
            }),
            _ => None,
        })
        .collect()
}
