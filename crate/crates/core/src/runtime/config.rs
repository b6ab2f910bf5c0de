use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RuntimeError;
use crate::buffer::FlushMode;
use crate::evolution::{SuccessThresholds, DEFAULT_MAX_NEW_SKILLS, DEFAULT_THRESHOLD};
use crate::scheduler::{parse_hhmm, CalendarEvent, SchedulerConfig};
use crate::simbench::{AgentParams, StreamConfig};
use crate::skill_store::DEFAULT_K;
use crate::trainer::{PolicyState, DEFAULT_ALPHA, DEFAULT_BATCH_SIZE};

pub const ENV_PREFIX: &str = "METALOOP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    SkillsOnly,
    #[default]
    Full,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::SkillsOnly, Condition::Full];

    pub fn evolves(self) -> bool {
        self != Condition::Baseline
    }

    pub fn trains(self) -> bool {
        self == Condition::Full
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::SkillsOnly => "skills_only",
            Condition::Full => "full",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition {s:?} (baseline, skills_only, full)"))
    }
}

/// How skills are distilled from failures.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum EvolverSpec {
    #[default]
    RuleBased,
    /// JSON completion endpoint taking `{"prompt": ...}`.
    Http(String),
}

impl Serialize for EvolverSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EvolverSpec::RuleBased => s.serialize_str("rule_based"),
            EvolverSpec::Http(url) => s.serialize_str(&format!("http:{url}")),
        }
    }
}

impl<'de> Deserialize<'de> for EvolverSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "rule_based" {
            Ok(EvolverSpec::RuleBased)
        } else if let Some(url) = raw.strip_prefix("http:") {
            Ok(EvolverSpec::Http(url.to_string()))
        } else {
            Err(serde::de::Error::custom(format!("unknown evolver {raw:?}")))
        }
    }
}

/// When the simulated user hands out tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workday {
    pub start: String,
    pub task_interval_minutes: u32,
    /// Rounds after this one come after the lunch break.
    pub lunch_after_round: u32,
    pub lunch_minutes: u32,
    /// A daily meeting follows this round; `None` for no meeting.
    pub meeting_after_round: Option<u32>,
    pub meeting_minutes: u32,
}

impl Default for Workday {
    fn default() -> Self {
        Workday {
            start: "09:00".into(),
            task_interval_minutes: 10,
            lunch_after_round: 21,
            lunch_minutes: 60,
            meeting_after_round: Some(32),
            meeting_minutes: 60,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub skills_dir: Option<PathBuf>,
    pub buffer_snapshot: Option<PathBuf>,
    /// Directory receiving events.jsonl, report.json and scores.csv.
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub condition: Condition,
    pub stream: StreamConfig,
    pub retrieval_k: usize,
    pub evolve_threshold: usize,
    pub max_new_skills: usize,
    pub batch_size: usize,
    pub alpha: f64,
    /// Batches in one training run.
    pub batches_per_run: usize,
    pub flush_mode: FlushMode,
    pub buffer_capacity: Option<usize>,
    pub thresholds: SuccessThresholds,
    pub scheduler: SchedulerConfig,
    pub agent: AgentParams,
    pub initial_policy: PolicyState,
    pub workday: Workday,
    pub evolver: EvolverSpec,
    pub paths: Paths,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            condition: Condition::Full,
            stream: StreamConfig::default(),
            retrieval_k: DEFAULT_K,
            evolve_threshold: DEFAULT_THRESHOLD,
            max_new_skills: DEFAULT_MAX_NEW_SKILLS,
            batch_size: DEFAULT_BATCH_SIZE,
            alpha: DEFAULT_ALPHA,
            batches_per_run: 16,
            flush_mode: FlushMode::Algorithm1,
            buffer_capacity: None,
            thresholds: SuccessThresholds::default(),
            scheduler: SchedulerConfig::default(),
            agent: AgentParams::default(),
            initial_policy: PolicyState::default(),
            workday: Workday::default(),
            evolver: EvolverSpec::RuleBased,
            paths: Paths::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> RuntimeError {
    RuntimeError::Config(msg.into())
}

impl RuntimeConfig {
    pub fn from_json(text: &str) -> Result<Self, RuntimeError> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.stream.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        self.stream.validate()?;
        self.scheduler.validate()?;
        if self.retrieval_k == 0 {
            return Err(invalid("retrieval_k must be at least 1"));
        }
        if self.evolve_threshold == 0 || self.max_new_skills == 0 {
            return Err(invalid("evolve_threshold and max_new_skills must be at least 1"));
        }
        if self.batch_size == 0 || self.batches_per_run == 0 {
            return Err(invalid("batch_size and batches_per_run must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !self.initial_policy.is_valid() {
            return Err(invalid("initial_policy probabilities must lie in [0, 1]"));
        }
        let a = &self.agent;
        if !(0.0..=1.0).contains(&a.skill_adherence) || !(0.0..=1.0).contains(&a.skill_boost) {
            return Err(invalid("agent parameters must lie in [0, 1]"));
        }
        parse_hhmm(&self.workday.start).map_err(|e| invalid(e.to_string()))?;
        if self.workday.task_interval_minutes == 0 {
            return Err(invalid("task_interval_minutes must be positive"));
        }
        if self.buffer_capacity == Some(0) {
            return Err(invalid("buffer_capacity must be positive"));
        }
        Ok(())
    }

    /// UTC instant at which the given round of the given day is served.
    pub fn task_time(&self, day: u32, round: u32) -> DateTime<Utc> {
        let start: NaiveTime = parse_hhmm(&self.workday.start).expect("validated");
        let offset = chrono::FixedOffset::east_opt(self.scheduler.utc_offset_minutes * 60).expect("validated offset");
        let local = self.stream.date_of(day).and_time(start);
        let base = offset.from_local_datetime(&local).single().expect("fixed offsets are unambiguous").with_timezone(&Utc);
        let mut minutes = i64::from(round.saturating_sub(1)) * i64::from(self.workday.task_interval_minutes);
        if round > self.workday.lunch_after_round {
            minutes += i64::from(self.workday.lunch_minutes);
        }
        if self.workday.meeting_after_round.is_some_and(|r| round > r) {
            minutes += i64::from(self.workday.meeting_minutes);
        }
        base + Duration::minutes(minutes)
    }

    /// The daily meetings as calendar busy blocks, one per stream day.
    pub fn meetings(&self) -> Vec<CalendarEvent> {
        let Some(after) = self.workday.meeting_after_round else { return Vec::new() };
        let gap = Duration::minutes(i64::from(self.workday.task_interval_minutes));
        (1..=self.stream.days)
            .map(|day| {
                let start = self.task_time(day, after) + gap;
                CalendarEvent { start, end: start + Duration::minutes(i64::from(self.workday.meeting_minutes)) }
            })
            .collect()
    }

    /// Applies `METALOOP_A__B=value` style overrides; values are read as
    /// JSON when they parse and as plain strings otherwise.
    pub fn apply_overrides<I, K, V>(self, vars: I) -> Result<Self, RuntimeError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut doc = serde_json::to_value(&self)?;
        let mut touched = false;
        for (key, value) in vars {
            let Some(path) = key.as_ref().strip_prefix(ENV_PREFIX) else { continue };
            let segments: Vec<String> = path.split("__").map(str::to_lowercase).collect();
            let parsed = serde_json::from_str(value.as_ref()).unwrap_or_else(|_| Value::String(value.as_ref().into()));
            set_path(&mut doc, &segments, parsed).map_err(|e| invalid(format!("{}: {e}", key.as_ref())))?;
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        serde_json::from_value(doc).map_err(|e| invalid(e.to_string()))
    }

    pub fn apply_env(self) -> Result<Self, RuntimeError> {
        self.apply_overrides(std::env::vars())
    }
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut node = doc;
    for seg in parents {
        node = node.get_mut(seg.as_str()).ok_or_else(|| format!("no config section {seg:?}"))?;
    }
    let map = node.as_object_mut().ok_or("not a config section")?;
    if !map.contains_key(last.as_str()) {
        return Err(format!("no config key {last:?}"));
    }
    map.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::IdleSpec;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = RuntimeConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RuntimeConfig::from_json(&text).unwrap(), cfg);
        let partial = RuntimeConfig::from_json(r#"{"condition":"skills_only","stream":{"days":2}}"#).unwrap();
        assert_eq!(partial.condition, Condition::SkillsOnly);
        assert_eq!(partial.stream.days, 2);
        assert_eq!(partial.stream.per_day, 42);
        cfg.validate().unwrap();
    }

    #[test]
    fn env_overrides() {
        let cfg = RuntimeConfig::default()
            .apply_overrides([
                ("METALOOP_CONDITION", "baseline"),
                ("METALOOP_STREAM__SEED", "17"),
                ("METALOOP_SCHEDULER__IDLE_SOURCE", "constant:45"),
                ("UNRELATED", "x"),
            ])
            .unwrap();
        assert_eq!(cfg.condition, Condition::Baseline);
        assert_eq!(cfg.stream.seed, 17);
        assert_eq!(cfg.scheduler.idle_source, IdleSpec::Constant(45.0));
        assert!(RuntimeConfig::default().apply_overrides([("METALOOP_NOPE", "1")]).is_err());
    }

    #[test]
    fn task_times_include_lunch() {
        let cfg = RuntimeConfig::default();
        assert_eq!(cfg.task_time(1, 1).to_rfc3339(), "2026-03-16T01:00:00+00:00");
        assert_eq!(cfg.task_time(1, 21).to_rfc3339(), "2026-03-16T04:20:00+00:00");
        assert_eq!(cfg.task_time(1, 22).to_rfc3339(), "2026-03-16T05:30:00+00:00");
        assert_eq!(cfg.task_time(2, 1).to_rfc3339(), "2026-03-17T01:00:00+00:00");
    }

    #[test]
    fn meeting_shifts_late_rounds_and_is_busy() {
        let mut cfg = RuntimeConfig::default();
        assert_eq!(cfg.task_time(1, 32).to_rfc3339(), "2026-03-16T07:10:00+00:00");
        assert_eq!(cfg.task_time(1, 33).to_rfc3339(), "2026-03-16T08:20:00+00:00");
        let meetings = cfg.meetings();
        assert_eq!(meetings.len(), 14);
        assert_eq!(meetings[0].start.to_rfc3339(), "2026-03-16T07:20:00+00:00");
        assert_eq!(meetings[0].end.to_rfc3339(), "2026-03-16T08:20:00+00:00");
        cfg.workday.meeting_after_round = None;
        assert!(cfg.meetings().is_empty());
        assert_eq!(cfg.task_time(1, 33).to_rfc3339(), "2026-03-16T07:20:00+00:00");
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = RuntimeConfig { alpha: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RuntimeConfig { retrieval_k: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
