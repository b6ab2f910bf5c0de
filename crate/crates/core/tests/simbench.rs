mod common;

use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use metaloop_core::evolution::catalog::canonical_skill;
use metaloop_core::simbench::{
    aggregate, check_file, effective_compliance, generate_stream, read_stream, score_multichoice, simulate_policy,
    write_stream, AgentParams, FileOp, ScoredTask, StreamConfig, TaskKind, TaskSpec, Workspace, DONE_LOG,
};
use metaloop_core::trainer::PolicyState;
use metaloop_core::RuleId;
use proptest::prelude::*;

fn day10_task() -> TaskSpec {
    generate_stream(&StreamConfig::default())
        .into_iter()
        .find(|t| t.day_index == 10 && t.kind == TaskKind::FileCheck && t.file.as_ref().unwrap().source.is_some())
        .unwrap()
}

/// Produces output that breaks exactly the rules in `broken`.
fn output(task: &TaskSpec, broken: &BTreeSet<RuleId>) -> Workspace {
    let mut ws = Workspace::new();
    ws.begin_task(task);
    let file = task.file.as_ref().unwrap();
    let src = file.source.as_ref().unwrap();
    if !broken.contains(&RuleId::P4) {
        ws.apply(&FileOp::Copy { from: src.path.clone(), to: format!("{}.bak", src.path) });
    }
    ws.apply(&FileOp::Write { path: src.path.clone(), content: r#"{"title":"updated"}"#.into() });
    let ts = if broken.contains(&RuleId::P1) { "2026-03-25T09:30:00Z" } else { "2026-03-25T09:30:00+08:00" };
    let mut body = serde_json::json!({"title": "t", "date": ts, "created_at": ts, "author": "agent"});
    if !broken.contains(&RuleId::P3) {
        body["status"] = "final".into();
    }
    let name = if broken.contains(&RuleId::P2) {
        format!("{}_20260325.json", file.stem)
    } else {
        format!("20260325_{}.json", file.stem)
    };
    ws.apply(&FileOp::Write { path: format!("day10/{name}"), content: body.to_string() });
    if !broken.contains(&RuleId::P5) {
        ws.apply(&FileOp::Append {
            path: DONE_LOG.into(),
            line: format!("[DONE] 2026-03-25T09:30:00+08:00 | {} | wrote {name}", task.id),
        });
    }
    ws
}

fn labels(n: usize, mask: u8) -> BTreeSet<String> {
    (0..n).filter(|i| mask & (1 << i) != 0).map(metaloop_core::simbench::option_label).collect()
}

#[test]
fn streams_are_deterministic_per_seed() {
    let cfg = StreamConfig::default();
    assert_eq!(generate_stream(&cfg), generate_stream(&cfg));
    let other = generate_stream(&StreamConfig { seed: 1, ..cfg.clone() });
    assert_ne!(generate_stream(&cfg), other);
    let tasks = generate_stream(&cfg);
    assert_eq!(tasks.len(), 14 * 42);
    let mut buf = Vec::new();
    write_stream(&tasks, &mut buf).unwrap();
    assert_eq!(read_stream(buf.as_slice()).unwrap(), tasks);
}

#[test]
fn rule_activation_is_monotone_and_matches_tasks() {
    let tasks = generate_stream(&StreamConfig::default());
    for day in 1..14 {
        let today: BTreeSet<_> = RuleId::active_on(day).into_iter().collect();
        let tomorrow: BTreeSet<_> = RuleId::active_on(day + 1).into_iter().collect();
        assert!(today.is_subset(&tomorrow));
    }
    assert_eq!(RuleId::active_on(1), vec![RuleId::P1]);
    assert_eq!(RuleId::active_on(10).len(), 5);
    for t in &tasks {
        match t.kind {
            TaskKind::FileCheck => assert_eq!(t.applicable_rules, RuleId::active_on(t.day_index)),
            TaskKind::MultiChoice => {
                assert!(t.topic().unwrap().is_active_on(t.day_index));
                assert!(t.truth.as_ref().unwrap().n_options >= 2);
            }
        }
    }
}

#[test]
fn offsetless_timestamp_fails_only_the_timestamp_rule() {
    let task = day10_task();
    let all: BTreeSet<RuleId> = BTreeSet::new();
    assert!(check_file(&task, &output(&task, &all)).unwrap().passed);
    let r = check_file(&task, &output(&task, &[RuleId::P1].into())).unwrap();
    assert!(!r.per_rule[&RuleId::P1]);
    assert_eq!(r.feedback, RuleId::P1.feedback());
}

#[test]
fn aggregate_counts_completion_over_file_tasks_only() {
    let tasks = generate_stream(&StreamConfig { days: 2, ..Default::default() });
    let scored: Vec<ScoredTask> = tasks
        .iter()
        .map(|t| ScoredTask::new(t, if t.kind == TaskKind::FileCheck && t.day_index == 1 { 1.0 } else { 0.5 }))
        .collect();
    let m = aggregate(&scored).unwrap();
    assert_eq!(m.day(1).unwrap().completion, Some(1.0));
    assert_eq!(m.day(2).unwrap().completion, Some(0.0));
    assert!((m.completion_rate - 0.5).abs() < 1e-12);
    assert!(aggregate(&[]).is_err());
}

#[test]
fn injected_skill_sets_the_violation_rate() {
    let task = generate_stream(&StreamConfig::default())
        .into_iter()
        .find(|t| t.kind == TaskKind::FileCheck)
        .unwrap();
    let theta = PolicyState::uniform(0.0, 1.0, 1.0);
    let params = AgentParams { skill_adherence: 0.9, ..Default::default() };
    let at = Utc.with_ymd_and_hms(2026, 3, 16, 1, 30, 0).unwrap();
    let skill = canonical_skill(RuleId::P1, 1, at);
    let rules: BTreeSet<RuleId> = [RuleId::P1].into();
    assert_eq!(effective_compliance(&theta, RuleId::P1, &rules, &params), 0.9);
    let n = 10_000u64;
    let violations = (0..n)
        .filter(|&seed| {
            let traj = simulate_policy(&theta, &task, &[&skill], &params, seed, 1, at);
            let mut ws = Workspace::new();
            ws.begin_task(&task);
            ws.apply_steps(&traj.actions).unwrap();
            !check_file(&task, &ws).unwrap().per_rule[&RuleId::P1]
        })
        .count();
    let rate = violations as f64 / n as f64;
    assert!((rate - 0.1).abs() <= 0.01, "violation rate {rate}");
}

proptest! {
    #[test]
    fn checker_is_the_conjunction_of_rules(broken in proptest::sample::subsequence(RuleId::ALL.to_vec(), 0..=5)) {
        let task = day10_task();
        let broken: BTreeSet<RuleId> = broken.into_iter().collect();
        let r = check_file(&task, &output(&task, &broken)).unwrap();
        for rule in RuleId::ALL {
            prop_assert_eq!(r.per_rule[&rule], !broken.contains(&rule));
        }
        prop_assert_eq!(r.passed, broken.is_empty());
        prop_assert_eq!(r.feedback.is_empty(), broken.is_empty());
    }

    #[test]
    fn score_is_bounded_and_symmetric(n in 2usize..=6, a in any::<u8>(), b in any::<u8>()) {
        let (t, p) = (labels(n, a), labels(n, b));
        let s = score_multichoice(&t, &p, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, score_multichoice(&p, &t, n).unwrap());
        prop_assert_eq!(s == 1.0, t == p);
    }

    #[test]
    fn out_of_range_labels_are_rejected(n in 2usize..=5) {
        let bad: BTreeSet<String> = [metaloop_core::simbench::option_label(n)].into();
        prop_assert!(score_multichoice(&bad, &BTreeSet::new(), n).is_err());
    }
}
