#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use metaloop_core::buffer::{Role, Step, Trajectory};
use metaloop_core::simbench::TaskKind;
use metaloop_core::{RuleId, Skill, SkillCategory};

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 16, 1, 0, 0).unwrap()
}

pub fn traj(id: &str, generation: u64, kind: TaskKind, reward: f64) -> Trajectory {
    Trajectory {
        task_id: id.to_string(),
        kind,
        generation,
        policy_version: 0,
        actions: vec![Step { action: format!("answer for {id}"), observation: "ok".into() }],
        reward,
        components: BTreeMap::new(),
        feedback: if reward < 1.0 { RuleId::P1.feedback().into() } else { String::new() },
        role: None,
        skill_names_used: Vec::new(),
        day_index: 1,
        collected_at: t0(),
    }
}

pub fn query(id: &str, generation: u64) -> Trajectory {
    let mut t = traj(id, generation, TaskKind::FileCheck, 1.0);
    t.role = Some(Role::Query);
    t
}

pub fn violating(id: &str, rules: &[RuleId], reward: f64) -> Trajectory {
    let mut t = query(id, 0);
    t.kind = TaskKind::MultiChoice;
    t.reward = reward;
    for r in rules {
        t.components.insert(r.to_string(), false);
    }
    t
}

pub fn skill(name: &str, description: &str, content: &str, minute: i64) -> Skill {
    Skill {
        name: name.to_string(),
        description: description.to_string(),
        content: content.to_string(),
        category: SkillCategory::General,
        created_generation: 0,
        created_at: t0() + Duration::minutes(minute),
    }
}
