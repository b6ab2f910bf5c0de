//! Idle-window scheduling for policy training.
//!
//! Three signals are sampled on every tick: a configured sleep window, the
//! input-device idle timer and calendar meetings. A window is open while
//! any of them says the user is away, except that fresh input always closes
//! it. The controller turns window edges into Start/Pause/Resume commands
//! for the trainer.

mod controller;
mod sources;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, NaiveTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use controller::{CheckpointInfo, Command, Omls, TickContext, TrainerHandle, TrainerStatus};
pub use sources::{
    parse_calendar_json, parse_ioreg_idle, parse_xprintidle, read_calendar_fixture, read_signal_trace, CalendarEvent, CalendarSource,
    IdleSource, SignalSource, SignalTrace,
};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("sleep window start and end are both {0}")]
    DegenerateWindow(String),
    #[error("invalid time of day {0:?}, expected HH:MM")]
    BadTime(String),
    #[error("invalid source spec {0:?}")]
    BadSource(String),
    #[error("calendar event ends at or before its start ({0})")]
    BadEvent(String),
    #[error("trainer did not acknowledge pause within {0} ms")]
    TrainerUnresponsive(u64),
    #[error("trainer is gone: {0}")]
    TrainerGone(String),
    #[error("idle probe failed: {0}")]
    Probe(String),
    #[error("calendar fetch failed: {0}")]
    Calendar(String),
    #[error("malformed signal trace at line {line}: {reason}")]
    BadTrace { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse_hhmm(s: &str) -> Result<NaiveTime, SchedulerError> {
    NaiveTime::parse_from_str(s, "%H:%M").map_err(|_| SchedulerError::BadTime(s.to_string()))
}

/// A daily quiet period, half-open `[start, end)`; may wrap midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SleepWindow {
    start: NaiveTime,
    end: NaiveTime,
}

impl SleepWindow {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Result<Self, SchedulerError> {
        if start == end {
            return Err(SchedulerError::DegenerateWindow(start.format("%H:%M").to_string()));
        }
        Ok(SleepWindow { start, end })
    }

    pub fn parse(start: &str, end: &str) -> Result<Self, SchedulerError> {
        SleepWindow::new(parse_hhmm(start)?, parse_hhmm(end)?)
    }

    pub fn start(&self) -> NaiveTime {
        self.start
    }

    pub fn end(&self) -> NaiveTime {
        self.end
    }

    pub fn contains(&self, now: NaiveTime) -> bool {
        sleep_window_contains(now, self)
    }
}

pub fn sleep_window_contains(now: NaiveTime, w: &SleepWindow) -> bool {
    if w.start < w.end {
        w.start <= now && now < w.end
    } else {
        now >= w.start || now < w.end
    }
}

pub fn inactivity_idle(idle_minutes: f64, delta: f64) -> bool {
    idle_minutes >= delta
}

pub fn calendar_busy(now: DateTime<Utc>, events: &[CalendarEvent]) -> bool {
    events.iter().any(|e| e.start <= now && now < e.end)
}

/// One sample of the three idle signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleSignalState {
    pub sleep_idle: bool,
    pub input_idle_minutes: f64,
    pub calendar_busy: bool,
    pub sampled_at: DateTime<Utc>,
}

impl IdleSignalState {
    pub fn present(at: DateTime<Utc>) -> Self {
        IdleSignalState { sleep_idle: false, input_idle_minutes: 0.0, calendar_busy: false, sampled_at: at }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Sleep,
    Inactivity,
    Calendar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDecision {
    pub open: bool,
    pub reasons: BTreeSet<Signal>,
    pub closed_by: Option<Signal>,
}

/// Any absence signal opens the window; input newer than the activity
/// epsilon closes it no matter what the other signals say.
pub fn decide(state: &IdleSignalState, config: &SchedulerConfig) -> WindowDecision {
    let mut reasons = BTreeSet::new();
    if state.sleep_idle {
        reasons.insert(Signal::Sleep);
    }
    if inactivity_idle(state.input_idle_minutes, config.idle_delta_minutes) {
        reasons.insert(Signal::Inactivity);
    }
    if state.calendar_busy {
        reasons.insert(Signal::Calendar);
    }
    if state.input_idle_minutes < config.activity_epsilon_minutes {
        let overridden = !reasons.is_empty();
        return WindowDecision {
            open: false,
            reasons: BTreeSet::new(),
            closed_by: overridden.then_some(Signal::Inactivity),
        };
    }
    WindowDecision { open: !reasons.is_empty(), reasons, closed_by: None }
}

/// Mid-batch trainer state handed across a pause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerCheckpoint {
    pub batch_index: usize,
    pub step_within_batch: usize,
    pub accumulated_state: Vec<u8>,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CalendarSpec {
    None,
    Fixture(PathBuf),
    Http(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdleSpec {
    Trace(PathBuf),
    Os,
    Constant(f64),
    /// Minutes since the last served task (simulation).
    Activity,
}

impl FromStr for CalendarSpec {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            Ok(CalendarSpec::None)
        } else if let Some(p) = s.strip_prefix("fixture:") {
            Ok(CalendarSpec::Fixture(PathBuf::from(p)))
        } else if let Some(u) = s.strip_prefix("http:") {
            // `http:<url>`; the url keeps its own scheme.
            Ok(CalendarSpec::Http(u.to_string()))
        } else {
            Err(SchedulerError::BadSource(s.to_string()))
        }
    }
}

impl fmt::Display for CalendarSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalendarSpec::None => f.write_str("none"),
            CalendarSpec::Fixture(p) => write!(f, "fixture:{}", p.display()),
            CalendarSpec::Http(u) => write!(f, "http:{u}"),
        }
    }
}

impl FromStr for IdleSpec {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "os" => Ok(IdleSpec::Os),
            "activity" => Ok(IdleSpec::Activity),
            _ => {
                if let Some(p) = s.strip_prefix("trace:") {
                    Ok(IdleSpec::Trace(PathBuf::from(p)))
                } else if let Some(m) = s.strip_prefix("constant:") {
                    let minutes: f64 = m.parse().map_err(|_| SchedulerError::BadSource(s.to_string()))?;
                    if minutes.is_nan() || minutes < 0.0 {
                        return Err(SchedulerError::BadSource(s.to_string()));
                    }
                    Ok(IdleSpec::Constant(minutes))
                } else {
                    Err(SchedulerError::BadSource(s.to_string()))
                }
            }
        }
    }
}

impl fmt::Display for IdleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdleSpec::Trace(p) => write!(f, "trace:{}", p.display()),
            IdleSpec::Os => f.write_str("os"),
            IdleSpec::Constant(m) => write!(f, "constant:{m}"),
            IdleSpec::Activity => f.write_str("activity"),
        }
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(CalendarSpec);
string_serde!(IdleSpec);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub sleep_start: String,
    pub sleep_end: String,
    pub idle_delta_minutes: f64,
    pub tick_seconds: u64,
    pub calendar_source: CalendarSpec,
    pub idle_source: IdleSpec,
    /// Input newer than this many minutes counts as the user being present.
    pub activity_epsilon_minutes: f64,
    pub pause_grace_ms: u64,
    /// Offset of the user's local clock from UTC, for the sleep window.
    pub utc_offset_minutes: i32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            sleep_start: "23:00".into(),
            sleep_end: "07:00".into(),
            idle_delta_minutes: 30.0,
            tick_seconds: 15,
            calendar_source: CalendarSpec::None,
            idle_source: IdleSpec::Activity,
            activity_epsilon_minutes: 1.0,
            pause_grace_ms: 2_000,
            utc_offset_minutes: 480,
        }
    }
}

impl SchedulerConfig {
    pub fn sleep_window(&self) -> Result<SleepWindow, SchedulerError> {
        SleepWindow::parse(&self.sleep_start, &self.sleep_end)
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        self.sleep_window()?;
        if self.idle_delta_minutes.is_nan() || self.idle_delta_minutes <= 0.0 {
            return Err(SchedulerError::BadSource(format!("idle_delta_minutes {}", self.idle_delta_minutes)));
        }
        if self.tick_seconds == 0 {
            return Err(SchedulerError::BadSource("tick_seconds 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(s: &str) -> NaiveTime {
        parse_hhmm(s).unwrap()
    }

    fn at(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 3, 16, h, m, 0).unwrap()
    }

    #[test]
    fn wrapping_sleep_window() {
        let w = SleepWindow::parse("23:00", "07:00").unwrap();
        assert!(w.contains(t("02:00")));
        assert!(!w.contains(t("12:00")));
        assert!(w.contains(t("23:00")));
        assert!(!w.contains(t("07:00")));
        assert!(w.contains(t("06:59")));
    }

    #[test]
    fn plain_sleep_window() {
        let w = SleepWindow::parse("13:00", "14:00").unwrap();
        assert!(w.contains(t("13:00")));
        assert!(w.contains(t("13:59")));
        assert!(!w.contains(t("14:00")));
        assert!(!w.contains(t("12:59")));
    }

    #[test]
    fn degenerate_window_rejected() {
        assert!(matches!(SleepWindow::parse("07:00", "07:00"), Err(SchedulerError::DegenerateWindow(_))));
        assert!(matches!(SleepWindow::parse("7am", "07:00"), Err(SchedulerError::BadTime(_))));
    }

    #[test]
    fn inactivity_threshold() {
        assert!(inactivity_idle(45.0, 30.0));
        assert!(!inactivity_idle(0.0, 30.0));
        assert!(inactivity_idle(30.0, 30.0));
    }

    #[test]
    fn calendar_half_open() {
        let ev = vec![CalendarEvent { start: at(10, 0), end: at(11, 0) }];
        assert!(calendar_busy(at(10, 30), &ev));
        assert!(calendar_busy(at(10, 0), &ev));
        assert!(!calendar_busy(at(11, 0), &ev));
        assert!(!calendar_busy(at(10, 30), &[]));
    }

    #[test]
    fn presence_overrides_sleep() {
        let cfg = SchedulerConfig::default();
        let s = IdleSignalState { sleep_idle: true, input_idle_minutes: 0.0, calendar_busy: false, sampled_at: at(2, 0) };
        let d = decide(&s, &cfg);
        assert!(!d.open);
        assert_eq!(d.closed_by, Some(Signal::Inactivity));
        assert!(d.reasons.is_empty());
    }

    #[test]
    fn inactivity_opens() {
        let cfg = SchedulerConfig::default();
        let s = IdleSignalState { sleep_idle: false, input_idle_minutes: 45.0, calendar_busy: false, sampled_at: at(12, 0) };
        let d = decide(&s, &cfg);
        assert!(d.open);
        assert_eq!(d.reasons, BTreeSet::from([Signal::Inactivity]));
        assert_eq!(d.closed_by, None);
    }

    #[test]
    fn nothing_absent_stays_closed() {
        let cfg = SchedulerConfig::default();
        let s = IdleSignalState { sleep_idle: false, input_idle_minutes: 5.0, calendar_busy: false, sampled_at: at(12, 0) };
        let d = decide(&s, &cfg);
        assert!(!d.open);
        assert!(d.reasons.is_empty());
        assert_eq!(decide(&IdleSignalState::present(at(12, 0)), &cfg).reasons.len(), 0);
    }

    #[test]
    fn all_reasons_listed() {
        let cfg = SchedulerConfig::default();
        let s = IdleSignalState { sleep_idle: true, input_idle_minutes: 90.0, calendar_busy: true, sampled_at: at(23, 30) };
        let d = decide(&s, &cfg);
        assert!(d.open);
        assert_eq!(d.reasons.len(), 3);
    }

    #[test]
    fn source_specs_round_trip_through_strings() {
        for s in ["none", "fixture:/tmp/cal.json", "http:http://localhost:9/events"] {
            assert_eq!(s.parse::<CalendarSpec>().unwrap().to_string(), s);
        }
        for s in ["trace:/tmp/t.jsonl", "os", "constant:45", "activity"] {
            assert_eq!(s.parse::<IdleSpec>().unwrap().to_string(), s);
        }
        assert!("constant:-3".parse::<IdleSpec>().is_err());
        assert!("carrier-pigeon".parse::<IdleSpec>().is_err());
        assert!("gcal".parse::<CalendarSpec>().is_err());
    }

    #[test]
    fn config_json_uses_flat_keys() {
        let cfg: SchedulerConfig = serde_json::from_str(
            r#"{"sleep_start":"22:30","sleep_end":"06:00","idle_delta_minutes":20,"tick_seconds":5,
                "calendar_source":"fixture:cal.json","idle_source":"constant:0"}"#,
        )
        .unwrap();
        assert_eq!(cfg.idle_source, IdleSpec::Constant(0.0));
        assert_eq!(cfg.calendar_source, CalendarSpec::Fixture("cal.json".into()));
        assert_eq!(cfg.tick_seconds, 5);
        cfg.validate().unwrap();
    }
}
