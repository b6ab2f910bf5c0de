//! Skill evolution: failure records from the current generation are
//! distilled into new skills, the generation advances by exactly one and
//! stale query samples are flushed.

pub mod catalog;
mod client;
mod prompt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::buffer::{BufferState, FlushStale};
use crate::rules::RuleId;
use crate::simbench::TaskKind;
use crate::skill_store::{Skill, SkillCategory, SkillError, SkillLibrary};

pub use client::{ClientError, EvolverClient, FixtureClient, HttpEvolverClient};
pub use prompt::{render_evolver_prompt, MAX_RENDERED_FAILURES};

pub const TRAJECTORY_EXCERPT_CHARS: usize = 600;
pub const RESPONSE_EXCERPT_CHARS: usize = 500;
pub const DEFAULT_THRESHOLD: usize = 3;
pub const DEFAULT_MAX_NEW_SKILLS: usize = 3;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("no failures to analyze")]
    EmptyFailures,
    #[error("evolver client failed: {0}")]
    Client(#[from] ClientError),
    #[error("evolver output is not a JSON array of skills: {0}")]
    MalformedOutput(String),
    #[error("outcome targets generation {got}, expected {expected}")]
    GenerationMismatch { expected: u64, got: u64 },
    #[error(transparent)]
    Skill(#[from] SkillError),
}

/// Reward below which a trajectory counts as a failure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    pub file_check: f64,
    pub multi_choice: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        SuccessThresholds { file_check: 1.0, multi_choice: 0.5 }
    }
}

impl SuccessThresholds {
    pub fn is_success(&self, kind: TaskKind, reward: f64) -> bool {
        match kind {
            TaskKind::FileCheck => reward >= self.file_check,
            TaskKind::MultiChoice => reward >= self.multi_choice,
        }
    }
}

/// A failed trajectory as the evolver sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub task_id: String,
    pub generation: u64,
    pub feedback: String,
    pub trajectory_excerpt: String,
    pub response_excerpt: String,
    pub reward: f64,
}

fn last_chars(s: &str, n: usize) -> String {
    let count = s.chars().count();
    s.chars().skip(count.saturating_sub(n)).collect()
}

fn first_chars(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

impl FailureRecord {
    pub fn new(
        task_id: impl Into<String>,
        generation: u64,
        feedback: impl Into<String>,
        conversation: &str,
        response: &str,
        reward: f64,
    ) -> Self {
        FailureRecord {
            task_id: task_id.into(),
            generation,
            feedback: feedback.into(),
            trajectory_excerpt: last_chars(conversation, TRAJECTORY_EXCERPT_CHARS),
            response_excerpt: first_chars(response, RESPONSE_EXCERPT_CHARS),
            reward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOutcome {
    pub new_skills: Vec<Skill>,
    pub new_generation: u64,
    pub consumed: Vec<String>,
}

pub fn should_evolve(support_count: usize, threshold: usize) -> bool {
    assert!(threshold >= 1, "evolution threshold must be at least 1");
    support_count >= threshold
}

/// Deterministic evolver: every failure feedback is scanned for rule
/// signatures and the canonical skill of each matched rule is proposed, in
/// order of first match, skipping skills the library already has.
pub fn evolve_rule_based(
    library: &SkillLibrary,
    failures: &[FailureRecord],
    max_new: usize,
    now: DateTime<Utc>,
) -> EvolutionOutcome {
    let new_generation = library.generation() + 1;
    let mut matched: Vec<RuleId> = Vec::new();
    for failure in failures {
        for rule in RuleId::mentioned_in(&failure.feedback) {
            if !matched.contains(&rule) {
                matched.push(rule);
            }
        }
    }
    let new_skills = matched
        .into_iter()
        .filter(|rule| !library.contains(catalog::canonical_name(*rule)))
        .take(max_new)
        .map(|rule| catalog::canonical_skill(rule, new_generation, now))
        .collect();
    EvolutionOutcome {
        new_skills,
        new_generation,
        consumed: failures.iter().map(|f| f.task_id.clone()).collect(),
    }
}

/// Result of an LLM-backed evolution. A malformed completion still advances
/// the generation (with no new skills) so the runtime keeps serving; the
/// parse problem is reported in `malformed`.
#[derive(Debug)]
pub struct LlmEvolution {
    pub outcome: EvolutionOutcome,
    pub malformed: Option<EvolutionError>,
    pub dropped: Vec<String>,
}

pub fn evolve_llm(
    client: &dyn EvolverClient,
    library: &SkillLibrary,
    failures: &[FailureRecord],
    max_new: usize,
    now: DateTime<Utc>,
) -> Result<LlmEvolution, EvolutionError> {
    let prompt = render_evolver_prompt(library, failures, max_new)?;
    let completion = client.complete(&prompt)?;
    let new_generation = library.generation() + 1;
    let consumed = failures.iter().map(|f| f.task_id.clone()).collect();
    match parse_skill_array(&completion, new_generation, now) {
        Ok(candidates) => {
            let mut new_skills: Vec<Skill> = Vec::new();
            let mut dropped = Vec::new();
            for candidate in candidates {
                match candidate {
                    Ok(skill)
                        if !library.contains(&skill.name) && !new_skills.iter().any(|s| s.name == skill.name) =>
                    {
                        new_skills.push(skill)
                    }
                    Ok(skill) => dropped.push(format!("{}: duplicate name", skill.name)),
                    Err(reason) => dropped.push(reason),
                }
            }
            new_skills.truncate(max_new);
            Ok(LlmEvolution {
                outcome: EvolutionOutcome { new_skills, new_generation, consumed },
                malformed: None,
                dropped,
            })
        }
        Err(err) => Ok(LlmEvolution {
            outcome: EvolutionOutcome { new_skills: Vec::new(), new_generation, consumed },
            malformed: Some(err),
            dropped: Vec::new(),
        }),
    }
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

type Candidate = Result<Skill, String>;

fn parse_skill_array(text: &str, generation: u64, now: DateTime<Utc>) -> Result<Vec<Candidate>, EvolutionError> {
    let malformed = |m: String| EvolutionError::MalformedOutput(m);
    let value: Value = serde_json::from_str(strip_code_fence(text)).map_err(|e| malformed(e.to_string()))?;
    let items = value.as_array().ok_or_else(|| malformed("top-level value is not an array".into()))?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let obj = item.as_object().ok_or_else(|| malformed(format!("element {i} is not an object")))?;
        let field = |key: &str| -> Result<String, EvolutionError> {
            obj.get(key)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| malformed(format!("element {i} lacks string field {key:?}")))
        };
        let name = field("name")?;
        let description = field("description")?;
        let content = field("content")?;
        let category = field("category")?;
        let Some(category) = SkillCategory::parse(&category) else {
            out.push(Err(format!("{name}: unknown category {category:?}")));
            continue;
        };
        let skill = Skill {
            name,
            description,
            content,
            category,
            created_generation: generation,
            created_at: now,
        };
        out.push(match skill.validate() {
            Ok(()) => Ok(skill),
            Err(e) => Err(e.to_string()),
        });
    }
    Ok(out)
}

/// What `apply_outcome` did, for the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedEvolution {
    pub added: Vec<String>,
    pub flush: FlushStale,
    pub flushed: usize,
}

/// Commits an outcome: grows the library, advances the generation, clears
/// the support set and flushes the query buffer of the old generation.
pub fn apply_outcome(
    library: &mut SkillLibrary,
    buffers: &mut BufferState,
    outcome: EvolutionOutcome,
) -> Result<AppliedEvolution, EvolutionError> {
    let old = library.generation();
    if outcome.new_generation != old + 1 || buffers.generation() != old {
        return Err(EvolutionError::GenerationMismatch {
            expected: old + 1,
            got: outcome.new_generation,
        });
    }
    let added = library.add_skills(outcome.new_skills)?;
    library.set_generation(outcome.new_generation);
    let flush = FlushStale { generation: old };
    let flushed = buffers.advance_generation(flush);
    Ok(AppliedEvolution { added, flush, flushed })
}
