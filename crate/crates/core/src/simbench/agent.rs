//! Stand-in for the served model: turns compliance probabilities into
//! concrete file operations and multiple-choice answers.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, FixedOffset, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{format_options, option_label, FileOp, TaskKind, TaskSpec, DONE_LOG};
use crate::buffer::{Step, Trajectory};
use crate::evolution::catalog::rule_for_skill;
use crate::rules::RuleId;
use crate::skill_store::Skill;
use crate::trainer::PolicyState;

const MAX_OPTIONS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Compliance floor for a rule whose skill is in the prompt.
    pub skill_adherence: f64,
    /// Added to per-option accuracy when the agent follows the question's
    /// rule and a skill on it is in the prompt.
    pub skill_boost: f64,
    /// Per-option accuracy without the question's rule, as a fraction of
    /// base competence.
    pub uninformed_scale: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams { skill_adherence: 0.6, skill_boost: 0.25, uninformed_scale: 0.8 }
    }
}

/// Uniform draws consumed in a fixed order, so that two policies facing the
/// same task and seed differ only where their probabilities differ.
struct Draws {
    rules: [f64; 5],
    exec: f64,
    options: [f64; MAX_OPTIONS],
}

impl Draws {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rules = std::array::from_fn(|_| rng.random::<f64>());
        let exec = rng.random::<f64>();
        let options = std::array::from_fn(|_| rng.random::<f64>());
        Draws { rules, exec, options }
    }

    fn rule(&self, r: RuleId) -> f64 {
        self.rules[RuleId::ALL.iter().position(|x| *x == r).expect("rule in ALL")]
    }
}

fn local(at: DateTime<Utc>) -> DateTime<FixedOffset> {
    at.with_timezone(&FixedOffset::east_opt(8 * 3600).expect("valid offset"))
}

fn timestamp(at: DateTime<Utc>, compliant: bool, variant: u32) -> String {
    let t = local(at);
    if compliant {
        return t.format("%Y-%m-%dT%H:%M:%S+08:00").to_string();
    }
    match variant % 3 {
        0 => at.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        1 => t.format("%Y-%m-%d %H:%M").to_string(),
        _ => t.format("%Y/%m/%d %H:%M:%S").to_string(),
    }
}

/// Probability that the output obeys `rule` given the injected skills.
pub fn effective_compliance(theta: &PolicyState, rule: RuleId, skill_rules: &BTreeSet<RuleId>, params: &AgentParams) -> f64 {
    let own = theta.compliance(rule);
    if skill_rules.contains(&rule) {
        own.max(params.skill_adherence)
    } else {
        own
    }
}

fn file_actions(
    theta: &PolicyState,
    task: &TaskSpec,
    skill_rules: &BTreeSet<RuleId>,
    params: &AgentParams,
    draws: &Draws,
    at: DateTime<Utc>,
) -> Vec<FileOp> {
    let file = task.file.as_ref().expect("file-check task carries a file spec");
    if draws.exec >= theta.competence(TaskKind::FileCheck) {
        return vec![FileOp::Note(format!("Gave up on {} before writing any output.", file.stem))];
    }
    let obeys = |r: RuleId| draws.rule(r) < effective_compliance(theta, r, skill_rules, params);
    let variant = task.round_index;
    let ts = timestamp(at, obeys(RuleId::P1), variant);
    let mut ops = Vec::new();

    if let Some(src) = &file.source {
        if obeys(RuleId::P4) {
            ops.push(FileOp::Copy { from: src.path.clone(), to: format!("{}.bak", src.path) });
        }
        let updated = serde_json::json!({"title": file.stem.replace('_', " "), "items": [task.id], "updated_at": ts});
        ops.push(FileOp::Write { path: src.path.clone(), content: updated.to_string() });
    }

    let mut body = serde_json::Map::new();
    body.insert("title".into(), file.stem.replace('_', " ").into());
    body.insert("date".into(), ts.clone().into());
    body.insert("summary".into(), format!("Output for {}", task.id).into());
    let metadata = [("created_at", ts.clone()), ("author", "agent".into()), ("status", "final".into())];
    let omitted = if obeys(RuleId::P3) { None } else { Some(variant as usize % metadata.len()) };
    for (i, (k, v)) in metadata.into_iter().enumerate() {
        if Some(i) != omitted {
            body.insert(k.into(), v.into());
        }
    }
    let dir = format!("day{:02}", task.day_index);
    let day = task.date.format("%Y%m%d");
    let name = if obeys(RuleId::P2) {
        format!("{day}_{}.json", file.stem)
    } else {
        format!("{}_{day}.json", file.stem)
    };
    ops.push(FileOp::Write { path: format!("{dir}/{name}"), content: serde_json::Value::Object(body).to_string() });

    if obeys(RuleId::P5) {
        ops.push(FileOp::Append {
            path: DONE_LOG.into(),
            line: format!("[DONE] {} | {} | wrote {name}", timestamp(at, true, 0), task.id),
        });
    } else if variant % 2 == 1 {
        ops.push(FileOp::Append { path: DONE_LOG.into(), line: format!("finished {}", task.id) });
    }
    ops
}

fn choice_actions(theta: &PolicyState, task: &TaskSpec, skill_rules: &BTreeSet<RuleId>, params: &AgentParams, draws: &Draws) -> Vec<FileOp> {
    let truth = task.truth.as_ref().expect("multi-choice task carries its truth");
    let topic = task.topic();
    let knows = topic.is_none_or(|t| draws.rule(t) < effective_compliance(theta, t, skill_rules, params));
    let competence = theta.competence(TaskKind::MultiChoice);
    let p = if knows {
        let boost = if topic.is_some_and(|t| skill_rules.contains(&t)) { params.skill_boost } else { 0.0 };
        (competence + boost).clamp(0.0, 1.0)
    } else {
        (competence * params.uninformed_scale).clamp(0.0, 1.0)
    };
    let predicted: BTreeSet<String> = (0..truth.n_options)
        .map(option_label)
        .zip(draws.options)
        .filter(|(label, u)| truth.correct.contains(label) == (*u < p))
        .map(|(label, _)| label)
        .collect();
    vec![FileOp::Answer(format!("My answer: {}", format_options(&predicted)))]
}

/// Serves `task` once. Reward, components and feedback are left for the
/// scorer to fill in.
pub fn simulate_policy(
    theta: &PolicyState,
    task: &TaskSpec,
    injected: &[&Skill],
    params: &AgentParams,
    seed: u64,
    generation: u64,
    at: DateTime<Utc>,
) -> Trajectory {
    let draws = Draws::new(seed);
    let skill_rules: BTreeSet<RuleId> = injected.iter().filter_map(|s| rule_for_skill(s)).collect();
    let ops = match task.kind {
        TaskKind::FileCheck => file_actions(theta, task, &skill_rules, params, &draws, at),
        TaskKind::MultiChoice => choice_actions(theta, task, &skill_rules, params, &draws),
    };
    let mut actions = vec![Step { action: FileOp::Note(task.context()).to_action(), observation: "task received".into() }];
    actions.extend(ops.into_iter().map(|op| Step { action: op.to_action(), observation: "ok".into() }));
    Trajectory {
        task_id: task.id.clone(),
        kind: task.kind,
        generation,
        policy_version: theta.version,
        actions,
        reward: 0.0,
        components: BTreeMap::new(),
        feedback: String::new(),
        role: None,
        skill_names_used: injected.iter().map(|s| s.name.clone()).collect(),
        day_index: task.day_index,
        collected_at: at,
    }
}
