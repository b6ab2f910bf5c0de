//! Deterministic workday benchmark.
//!
//! A stream is a sequence of workdays, each with a fixed number of rounds.
//! File-check tasks ask the agent to produce or update a JSON file and are
//! graded by one checker per active preference rule; multi-choice tasks are
//! graded by option overlap. Rules switch on progressively, so later days
//! demand more conventions at once.

mod agent;
mod metrics;
mod scoring;
mod workspace;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::RuleId;

pub use agent::{effective_compliance, simulate_policy, AgentParams};
pub use metrics::{aggregate, write_scores_csv, DayMetrics, Metrics, ScoredTask};
pub use scoring::{format_options, option_label, parse_options, score_multichoice};
pub use workspace::{check_file, CheckResult, FileOp, Workspace, DONE_LOG};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("task {0} is not a file-check task")]
    NotFileCheck(String),
    #[error("expected output {0} was not produced")]
    MissingOutput(String),
    #[error("option {label:?} is outside the {n_options} options")]
    InvalidOption { label: String, n_options: usize },
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error("unparseable action {0:?}")]
    BadAction(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FileCheck,
    MultiChoice,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::FileCheck => "file_check",
            TaskKind::MultiChoice => "multi_choice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McTruth {
    pub correct: BTreeSet<String>,
    pub n_options: usize,
}

/// What a file-check task asks for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTask {
    /// snake_case description shared by compliant and non-compliant names.
    pub stem: String,
    /// File the environment places before the task and the task updates.
    pub source: Option<SeedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFile {
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub day_index: u32,
    pub round_index: u32,
    pub date: NaiveDate,
    pub kind: TaskKind,
    pub prompt: String,
    pub applicable_rules: Vec<RuleId>,
    pub truth: Option<McTruth>,
    pub expected_output_path: Option<String>,
    pub file: Option<FileTask>,
    pub feedback_on_fail: String,
    /// The previous round's feedback, shown as corrective context.
    pub prior_feedback: Option<String>,
}

impl TaskSpec {
    /// Text used to retrieve skills for this task.
    pub fn context(&self) -> String {
        match &self.prior_feedback {
            Some(f) => format!("{}\nPrevious round: {}", self.prompt, f),
            None => self.prompt.clone(),
        }
    }

    /// The rule a multi-choice question is about.
    pub fn topic(&self) -> Option<RuleId> {
        match self.kind {
            TaskKind::MultiChoice => self.applicable_rules.first().copied(),
            TaskKind::FileCheck => None,
        }
    }
}

/// Distractor count as a step function of the day: `base` on day 1, one
/// more every `every_days`, capped at `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyRamp {
    pub base: usize,
    pub every_days: u32,
    pub max: usize,
}

impl Default for DifficultyRamp {
    fn default() -> Self {
        DifficultyRamp { base: 1, every_days: 4, max: 4 }
    }
}

impl DifficultyRamp {
    pub fn distractors(&self, day: u32) -> usize {
        let steps = (day.saturating_sub(1) / self.every_days.max(1)) as usize;
        (self.base + steps).min(self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub seed: u64,
    pub days: u32,
    pub per_day: u32,
    /// Fraction of each day's rounds that are multi-choice.
    pub mix: f64,
    pub difficulty_ramp: DifficultyRamp,
    pub start_date: NaiveDate,
    /// Fraction of file-check tasks that update a pre-existing file.
    pub modify_fraction: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            seed: 0,
            days: 14,
            per_day: 42,
            mix: 31.0 / 42.0,
            difficulty_ramp: DifficultyRamp::default(),
            start_date: NaiveDate::from_ymd_opt(2026, 3, 16).expect("valid date"),
            modify_fraction: 0.75,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.days < 1 || self.per_day < 1 {
            return Err(SimError::InvalidConfig("days and per_day must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix) || !(0.0..=1.0).contains(&self.modify_fraction) {
            return Err(SimError::InvalidConfig("mix and modify_fraction must lie in [0, 1]".into()));
        }
        if self.difficulty_ramp.base + 1 > 6 {
            return Err(SimError::InvalidConfig("ramp base leaves no room for a correct option".into()));
        }
        Ok(())
    }

    pub fn multi_choice_per_day(&self) -> u32 {
        (self.per_day as f64 * self.mix).round() as u32
    }

    pub fn date_of(&self, day: u32) -> NaiveDate {
        self.start_date + Duration::days(i64::from(day) - 1)
    }
}

/// SplitMix64 finalizer over a pair; used to give every task and batch its
/// own reproducible random stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STEMS: [&str; 12] = [
    "meeting_notes",
    "sprint_report",
    "incident_summary",
    "vendor_invoice",
    "travel_plan",
    "release_checklist",
    "budget_review",
    "client_followup",
    "onboarding_plan",
    "weekly_digest",
    "risk_register",
    "design_review",
];

fn question(rule: RuleId) -> &'static str {
    match rule {
        RuleId::P1 => "Which of these timestamps follow the team's date and time convention?",
        RuleId::P2 => "Which of these output file names follow the team's naming convention?",
        RuleId::P3 => "Which of these records carry every required metadata field?",
        RuleId::P4 => "Which of these edit sequences keep a backup of the file before modifying it?",
        RuleId::P5 => "Which of these task wrap-ups record completion in the team log?",
    }
}

fn file_prompt(stem: &str, modifies: bool, date: NaiveDate) -> String {
    let subject = stem.replace('_', " ");
    if modifies {
        format!("Update the {subject} for {date} and save the revised version as a JSON file.")
    } else {
        format!("Prepare the {subject} for {date} as a JSON file.")
    }
}

fn day_dir(day: u32) -> String {
    format!("day{day:02}")
}

fn build_multichoice(rng: &mut ChaCha8Rng, cfg: &StreamConfig, day: u32, active: &[RuleId]) -> (RuleId, McTruth) {
    let topic = active[rng.random_range(0..active.len())];
    let distractors = cfg.difficulty_ramp.distractors(day);
    let max_correct = (6 - distractors).clamp(1, 2);
    let n_correct = rng.random_range(1..=max_correct);
    let n_options = n_correct + distractors;
    let mut labels: Vec<usize> = (0..n_options).collect();
    labels.shuffle(rng);
    let correct = labels[..n_correct].iter().map(|&i| option_label(i)).collect();
    (topic, McTruth { correct, n_options })
}

/// Distinct stems for one day, so no two outputs of a day share a path.
fn day_stems(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    for pass in 0.. {
        if out.len() >= count {
            break;
        }
        let mut deck = STEMS.to_vec();
        deck.shuffle(rng);
        out.extend(deck.into_iter().map(|s| if pass == 0 { s.to_string() } else { format!("{s}_{}", pass + 1) }));
    }
    out.truncate(count);
    out
}

fn build_file_task(rng: &mut ChaCha8Rng, cfg: &StreamConfig, day: u32, round: u32, stem: String) -> FileTask {
    let modifies = rng.random_bool(cfg.modify_fraction);
    let source = modifies.then(|| SeedFile {
        path: format!("{}/inputs/{stem}_r{round:02}_source.json", day_dir(day)),
        content: format!("{{\"title\": \"{}\", \"items\": []}}", stem.replace('_', " ")),
    });
    FileTask { stem, source }
}

/// Builds the task stream for `cfg`. Every day gets the same number of
/// multi-choice and file-check rounds, interleaved by the seed.
pub fn generate_stream(cfg: &StreamConfig) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5354_5245_414d));
    let n_mc = cfg.multi_choice_per_day().min(cfg.per_day) as usize;
    let mut tasks = Vec::with_capacity((cfg.days * cfg.per_day) as usize);
    for day in 1..=cfg.days {
        let date = cfg.date_of(day);
        let active = RuleId::active_on(day);
        let mut kinds: Vec<TaskKind> = (0..cfg.per_day as usize)
            .map(|i| if i < n_mc { TaskKind::MultiChoice } else { TaskKind::FileCheck })
            .collect();
        kinds.shuffle(&mut rng);
        let mut stems = day_stems(&mut rng, cfg.per_day as usize - n_mc).into_iter();
        let mut prior: Option<String> = None;
        for (i, kind) in kinds.into_iter().enumerate() {
            let round = i as u32 + 1;
            let id = format!("d{day:02}-r{round:02}");
            let task = match kind {
                TaskKind::MultiChoice => {
                    let (topic, truth) = build_multichoice(&mut rng, cfg, day, &active);
                    TaskSpec {
                        id,
                        day_index: day,
                        round_index: round,
                        date,
                        kind,
                        prompt: format!("{} Answer with \\bbox{{...}} listing every valid option.", question(topic)),
                        applicable_rules: vec![topic],
                        truth: Some(truth),
                        expected_output_path: None,
                        file: None,
                        feedback_on_fail: topic.feedback().to_string(),
                        prior_feedback: prior.clone(),
                    }
                }
                TaskKind::FileCheck => {
                    let stem = stems.next().expect("one stem per file-check round");
                    let file = build_file_task(&mut rng, cfg, day, round, stem);
                    let expected = format!("{}/{}_{}.json", day_dir(day), date.format("%Y%m%d"), file.stem);
                    TaskSpec {
                        id,
                        day_index: day,
                        round_index: round,
                        date,
                        kind,
                        prompt: file_prompt(&file.stem, file.source.is_some(), date),
                        applicable_rules: active.clone(),
                        truth: None,
                        expected_output_path: Some(expected),
                        file: Some(file),
                        feedback_on_fail: active.iter().map(|r| r.feedback()).collect::<Vec<_>>().join(" "),
                        prior_feedback: prior.clone(),
                    }
                }
            };
            prior = Some(task.feedback_on_fail.clone());
            tasks.push(task);
        }
    }
    tasks
}

pub fn write_stream<W: Write>(tasks: &[TaskSpec], mut out: W) -> Result<(), SimError> {
    for task in tasks {
        serde_json::to_writer(&mut out, task)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_stream<R: BufRead>(input: R) -> Result<Vec<TaskSpec>, SimError> {
    let mut tasks = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            tasks.push(serde_json::from_str(&line)?);
        }
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sized_stream() {
        let tasks = generate_stream(&StreamConfig::default());
        assert_eq!(tasks.len(), 588);
        let fc = tasks.iter().filter(|t| t.kind == TaskKind::FileCheck).count();
        assert_eq!(fc, 14 * 11);
        for day in 1..=14 {
            assert_eq!(tasks.iter().filter(|t| t.day_index == day).count(), 42);
        }
    }

    #[test]
    fn file_outputs_are_unique_within_a_day() {
        let cfg = StreamConfig { per_day: 40, mix: 0.25, ..StreamConfig::default() };
        let tasks = generate_stream(&cfg);
        for day in 1..=cfg.days {
            let paths: Vec<_> =
                tasks.iter().filter(|t| t.day_index == day).filter_map(|t| t.expected_output_path.clone()).collect();
            let unique: std::collections::BTreeSet<_> = paths.iter().collect();
            assert_eq!(unique.len(), paths.len(), "day {day}");
        }
    }

    #[test]
    fn applicable_rules_follow_schedule() {
        let tasks = generate_stream(&StreamConfig::default());
        let fc = |day| tasks.iter().find(|t| t.day_index == day && t.kind == TaskKind::FileCheck).unwrap();
        assert_eq!(fc(1).applicable_rules, vec![RuleId::P1]);
        assert_eq!(fc(10).applicable_rules, RuleId::ALL.to_vec());
        for t in &tasks {
            assert!(t.applicable_rules.iter().all(|r| r.is_active_on(t.day_index)));
            if let Some(truth) = &t.truth {
                assert!((2..=6).contains(&truth.n_options));
                assert!(!truth.correct.is_empty());
            }
        }
    }

    #[test]
    fn ordered_and_deterministic() {
        let cfg = StreamConfig { seed: 9, days: 3, per_day: 7, ..Default::default() };
        let a = generate_stream(&cfg);
        let mut buf = Vec::new();
        write_stream(&a, &mut buf).unwrap();
        let mut buf2 = Vec::new();
        write_stream(&generate_stream(&cfg), &mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(read_stream(&buf[..]).unwrap(), a);
        let keys: Vec<_> = a.iter().map(|t| (t.day_index, t.round_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn prior_feedback_chains_within_day() {
        let tasks = generate_stream(&StreamConfig { days: 2, per_day: 5, ..Default::default() });
        assert!(tasks[0].prior_feedback.is_none());
        assert_eq!(tasks[1].prior_feedback.as_deref(), Some(tasks[0].feedback_on_fail.as_str()));
        assert!(tasks[5].prior_feedback.is_none());
    }

    #[test]
    fn ramp_is_monotone() {
        let r = DifficultyRamp::default();
        let d: Vec<_> = (1..=30).map(|day| r.distractors(day)).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(d[0], 1);
        assert_eq!(*d.last().unwrap(), 4);
    }
}
