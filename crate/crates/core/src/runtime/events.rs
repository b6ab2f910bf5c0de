use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Condition, RuntimeError};
use crate::buffer::{FlushMode, Route};
use crate::rules::RuleId;
use crate::scheduler::Signal;
use crate::simbench::TaskKind;

/// One line of the session log. Every timestamp is virtual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionStart {
        at: DateTime<Utc>,
        condition: Condition,
        seed: u64,
        flush_mode: FlushMode,
        buffer_capacity: Option<usize>,
        tasks: usize,
    },
    Window {
        at: DateTime<Utc>,
        open: bool,
        reasons: Vec<Signal>,
        closed_by: Option<Signal>,
    },
    TrainStart {
        at: DateTime<Utc>,
        run: u64,
        generation: u64,
        batches: usize,
        steps_total: usize,
    },
    /// `count` steps at one-second spacing starting at `at`; the position
    /// is the one reached afterwards.
    TrainSteps {
        at: DateTime<Utc>,
        count: usize,
        batch_index: usize,
        step_within_batch: usize,
    },
    BatchDone {
        at: DateTime<Utc>,
        batch_index: usize,
        mean_reward: f64,
        updated_rules: Vec<RuleId>,
        generation: u64,
    },
    TrainPause {
        at: DateTime<Utc>,
        batch_index: usize,
        step_within_batch: usize,
    },
    TrainResume {
        at: DateTime<Utc>,
        batch_index: usize,
        step_within_batch: usize,
    },
    TrainDiscard {
        at: DateTime<Utc>,
        batch_index: usize,
        step_within_batch: usize,
        generation: u64,
    },
    HotSwap {
        at: DateTime<Utc>,
        version: u64,
    },
    TaskStart {
        at: DateTime<Utc>,
        task_id: String,
        generation: u64,
        policy_version: u64,
        skills: Vec<String>,
    },
    TaskServed {
        at: DateTime<Utc>,
        task_id: String,
        day: u32,
        round: u32,
        kind: TaskKind,
        value: f64,
        route: Option<Route>,
        generation: u64,
        policy_version: u64,
        buffer_len: usize,
        min_generation: Option<u64>,
        support_len: usize,
    },
    Evolution {
        at: DateTime<Utc>,
        from_generation: u64,
        to_generation: u64,
        added: Vec<String>,
        consumed: usize,
        malformed: Option<String>,
    },
    Flush {
        at: DateTime<Utc>,
        generation: u64,
        flushed: usize,
        buffer_len: usize,
        min_generation: Option<u64>,
    },
    DayEnd {
        at: DateTime<Utc>,
        day: u32,
        generation: u64,
        library_size: usize,
        policy_version: u64,
        accuracy: f64,
        completion: Option<f64>,
    },
    SessionEnd {
        at: DateTime<Utc>,
        complete: bool,
        error: Option<String>,
    },
}

impl Event {
    pub fn at(&self) -> DateTime<Utc> {
        match self {
            Event::SessionStart { at, .. }
            | Event::Window { at, .. }
            | Event::TrainStart { at, .. }
            | Event::TrainSteps { at, .. }
            | Event::BatchDone { at, .. }
            | Event::TrainPause { at, .. }
            | Event::TrainResume { at, .. }
            | Event::TrainDiscard { at, .. }
            | Event::HotSwap { at, .. }
            | Event::TaskStart { at, .. }
            | Event::TaskServed { at, .. }
            | Event::Evolution { at, .. }
            | Event::Flush { at, .. }
            | Event::DayEnd { at, .. }
            | Event::SessionEnd { at, .. } => *at,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Event::SessionStart { .. } => "session_start",
            Event::Window { .. } => "window",
            Event::TrainStart { .. } => "train_start",
            Event::TrainSteps { .. } => "train_steps",
            Event::BatchDone { .. } => "batch_done",
            Event::TrainPause { .. } => "train_pause",
            Event::TrainResume { .. } => "train_resume",
            Event::TrainDiscard { .. } => "train_discard",
            Event::HotSwap { .. } => "hot_swap",
            Event::TaskStart { .. } => "task_start",
            Event::TaskServed { .. } => "task_served",
            Event::Evolution { .. } => "evolution",
            Event::Flush { .. } => "flush",
            Event::DayEnd { .. } => "day_end",
            Event::SessionEnd { .. } => "session_end",
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(
            self,
            Event::TrainStart { .. }
                | Event::TrainSteps { .. }
                | Event::BatchDone { .. }
                | Event::TrainPause { .. }
                | Event::TrainResume { .. }
                | Event::TrainDiscard { .. }
                | Event::HotSwap { .. }
        )
    }
}

pub fn write_events<W: Write>(events: &[Event], mut out: W) -> Result<(), RuntimeError> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn events_to_string(events: &[Event]) -> String {
    let mut buf = Vec::new();
    write_events(events, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>, RuntimeError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line)
            .map_err(|e| RuntimeError::EventLog { line: i + 1, reason: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}
