//! Where the idle signals come from: scripted traces, the OS idle timer,
//! constant stubs, simulated user activity, calendar fixtures and an HTTP
//! events endpoint.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::Command as Process;
use std::time::Duration;

use chrono::{DateTime, FixedOffset, Utc};
use serde::{Deserialize, Serialize};

use super::{calendar_busy, CalendarSpec, IdleSignalState, IdleSpec, SchedulerConfig, SchedulerError, SleepWindow};

/// Idle minutes reported before any input has been observed.
const NEVER_ACTIVE_MINUTES: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarEvent {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

fn validate_events(events: &[CalendarEvent]) -> Result<(), SchedulerError> {
    match events.iter().find(|e| e.start >= e.end) {
        Some(e) => Err(SchedulerError::BadEvent(format!("{} .. {}", e.start, e.end))),
        None => Ok(()),
    }
}

/// Parses the events document: a JSON array of `{start, end}` RFC 3339 pairs.
pub fn parse_calendar_json(body: &str) -> Result<Vec<CalendarEvent>, SchedulerError> {
    let events: Vec<CalendarEvent> =
        serde_json::from_str(body).map_err(|e| SchedulerError::Calendar(e.to_string()))?;
    validate_events(&events)?;
    Ok(events)
}

pub fn read_calendar_fixture(path: &Path) -> Result<Vec<CalendarEvent>, SchedulerError> {
    parse_calendar_json(&fs::read_to_string(path)?)
}

pub struct HttpCalendar {
    url: String,
    agent: ureq::Agent,
    refresh: chrono::Duration,
    cache: Option<(DateTime<Utc>, Vec<CalendarEvent>)>,
}

impl HttpCalendar {
    pub fn new(url: impl Into<String>, timeout: Duration, refresh: chrono::Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpCalendar { url: url.into(), agent, refresh, cache: None }
    }

    pub fn fetch(&self) -> Result<Vec<CalendarEvent>, SchedulerError> {
        let mut resp = self.agent.get(&self.url).call().map_err(|e| SchedulerError::Calendar(e.to_string()))?;
        let body = resp.body_mut().read_to_string().map_err(|e| SchedulerError::Calendar(e.to_string()))?;
        parse_calendar_json(&body)
    }

    fn events_at(&mut self, at: DateTime<Utc>) -> Result<&[CalendarEvent], SchedulerError> {
        let stale = match &self.cache {
            Some((fetched, _)) => at - *fetched >= self.refresh || at < *fetched,
            None => true,
        };
        if stale {
            let events = self.fetch()?;
            self.cache = Some((at, events));
        }
        Ok(&self.cache.as_ref().expect("cache filled above").1)
    }
}

pub enum CalendarSource {
    None,
    Fixture(Vec<CalendarEvent>),
    Http(HttpCalendar),
}

impl CalendarSource {
    pub fn busy(&mut self, at: DateTime<Utc>) -> Result<bool, SchedulerError> {
        match self {
            CalendarSource::None => Ok(false),
            CalendarSource::Fixture(events) => Ok(calendar_busy(at, events)),
            CalendarSource::Http(http) => Ok(calendar_busy(at, http.events_at(at)?)),
        }
    }
}

/// `ioreg -c IOHIDSystem` reports `"HIDIdleTime" = <nanoseconds>`.
pub fn parse_ioreg_idle(output: &str) -> Option<f64> {
    output.lines().find_map(|line| {
        let (_, rest) = line.split_once("\"HIDIdleTime\" = ")?;
        let ns: f64 = rest.trim().parse().ok()?;
        Some(ns / 1e9 / 60.0)
    })
}

/// `xprintidle` prints milliseconds.
pub fn parse_xprintidle(output: &str) -> Option<f64> {
    let ms: f64 = output.trim().parse().ok()?;
    Some(ms / 1000.0 / 60.0)
}

type IdleProbe = (&'static str, &'static [&'static str], fn(&str) -> Option<f64>);

fn probe_os_idle() -> Result<f64, SchedulerError> {
    let (program, args, parse): IdleProbe = if cfg!(target_os = "macos") {
        ("ioreg", &["-c", "IOHIDSystem"], parse_ioreg_idle)
    } else {
        ("xprintidle", &[], parse_xprintidle)
    };
    let out = Process::new(program)
        .args(args)
        .output()
        .map_err(|e| SchedulerError::Probe(format!("{program}: {e}")))?;
    if !out.status.success() {
        return Err(SchedulerError::Probe(format!("{program} exited with {}", out.status)));
    }
    parse(&String::from_utf8_lossy(&out.stdout))
        .ok_or_else(|| SchedulerError::Probe(format!("could not parse {program} output")))
}

pub enum IdleSource {
    Constant(f64),
    Os,
    Activity { last_input: Option<DateTime<Utc>> },
}

impl IdleSource {
    pub fn idle_minutes(&mut self, at: DateTime<Utc>) -> Result<f64, SchedulerError> {
        match self {
            IdleSource::Constant(m) => Ok(*m),
            IdleSource::Os => probe_os_idle(),
            IdleSource::Activity { last_input } => Ok(match last_input {
                Some(t) if *t <= at => (at - *t).num_milliseconds() as f64 / 60_000.0,
                Some(_) => 0.0,
                None => NEVER_ACTIVE_MINUTES,
            }),
        }
    }
}

/// Recorded signal states, piecewise constant from each `sampled_at`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalTrace {
    samples: Vec<IdleSignalState>,
}

impl SignalTrace {
    pub fn new(mut samples: Vec<IdleSignalState>) -> Self {
        samples.sort_by_key(|s| s.sampled_at);
        SignalTrace { samples }
    }

    pub fn samples(&self) -> &[IdleSignalState] {
        &self.samples
    }

    /// State in force at `at`; before the first sample the user is present.
    pub fn at(&self, at: DateTime<Utc>) -> IdleSignalState {
        let idx = self.samples.partition_point(|s| s.sampled_at <= at);
        match idx {
            0 => IdleSignalState::present(at),
            i => IdleSignalState { sampled_at: at, ..self.samples[i - 1].clone() },
        }
    }
}

pub fn read_signal_trace<R: Read>(input: R) -> Result<SignalTrace, SchedulerError> {
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: IdleSignalState = serde_json::from_str(&line)
            .map_err(|e| SchedulerError::BadTrace { line: i + 1, reason: e.to_string() })?;
        if s.input_idle_minutes.is_nan() || s.input_idle_minutes < 0.0 {
            return Err(SchedulerError::BadTrace { line: i + 1, reason: "negative idle minutes".into() });
        }
        samples.push(s);
    }
    Ok(SignalTrace::new(samples))
}

/// Produces an `IdleSignalState` for any instant.
pub enum SignalSource {
    Trace(SignalTrace),
    Composite {
        sleep: SleepWindow,
        offset: FixedOffset,
        idle: IdleSource,
        calendar: CalendarSource,
        /// Busy blocks known locally, on top of `calendar`.
        local_events: Vec<CalendarEvent>,
    },
}

impl SignalSource {
    pub fn from_config(cfg: &SchedulerConfig) -> Result<Self, SchedulerError> {
        let idle = match &cfg.idle_source {
            IdleSpec::Trace(path) => return Ok(SignalSource::Trace(read_signal_trace(fs::File::open(path)?)?)),
            IdleSpec::Os => IdleSource::Os,
            IdleSpec::Constant(m) => IdleSource::Constant(*m),
            IdleSpec::Activity => IdleSource::Activity { last_input: None },
        };
        let calendar = match &cfg.calendar_source {
            CalendarSpec::None => CalendarSource::None,
            CalendarSpec::Fixture(path) => CalendarSource::Fixture(read_calendar_fixture(path)?),
            CalendarSpec::Http(url) => CalendarSource::Http(HttpCalendar::new(
                url.clone(),
                Duration::from_secs(10),
                chrono::Duration::minutes(5),
            )),
        };
        Ok(SignalSource::Composite {
            sleep: cfg.sleep_window()?,
            offset: FixedOffset::east_opt(cfg.utc_offset_minutes * 60)
                .ok_or_else(|| SchedulerError::BadSource(format!("utc_offset_minutes {}", cfg.utc_offset_minutes)))?,
            idle,
            calendar,
            local_events: Vec::new(),
        })
    }

    /// Adds busy blocks that are checked alongside the configured calendar.
    /// Ignored by trace sources.
    pub fn add_calendar_events(&mut self, events: impl IntoIterator<Item = CalendarEvent>) {
        if let SignalSource::Composite { local_events, .. } = self {
            local_events.extend(events);
        }
    }

    /// Tells activity-driven sources that the user just interacted.
    pub fn note_input(&mut self, at: DateTime<Utc>) {
        if let SignalSource::Composite { idle: IdleSource::Activity { last_input }, .. } = self {
            *last_input = Some(at);
        }
    }

    pub fn sample(&mut self, at: DateTime<Utc>) -> Result<IdleSignalState, SchedulerError> {
        match self {
            SignalSource::Trace(trace) => Ok(trace.at(at)),
            SignalSource::Composite { sleep, offset, idle, calendar, local_events } => Ok(IdleSignalState {
                sleep_idle: sleep.contains(at.with_timezone(offset).time()),
                input_idle_minutes: idle.idle_minutes(at)?,
                calendar_busy: calendar_busy(at, local_events) || calendar.busy(at)?,
                sampled_at: at,
            }),
        }
    }
}
