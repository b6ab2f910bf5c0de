mod common;

use metaloop_core::evolution::FixtureClient;
use metaloop_core::runtime::{
    check_invariants, compare_conditions, events_to_string, read_events, run_session, run_session_with_client,
    Condition, Event, RuntimeConfig,
};
use metaloop_core::skill_store;

fn cfg(condition: Condition) -> RuntimeConfig {
    RuntimeConfig::default().with_condition(condition)
}

#[test]
fn baseline_never_evolves_or_trains() {
    let r = run_session(cfg(Condition::Baseline)).unwrap();
    assert!(r.complete);
    assert!(r.skills.is_empty());
    assert_eq!(r.generation, 0);
    assert!(r.events.iter().all(|e| !e.is_training() && !matches!(e, Event::Evolution { .. })));
    assert_eq!(r.results.len(), 14 * 42);
}

#[test]
fn skills_only_evolves_early_without_training() {
    let r = run_session(cfg(Condition::SkillsOnly)).unwrap();
    assert!(r.complete);
    let day2 = r.library_growth.iter().find(|g| g.day == 2).unwrap();
    assert!(day2.generation >= 1);
    assert!(r.events.iter().all(|e| !e.is_training()));
    assert_eq!(r.final_policy, RuntimeConfig::default().initial_policy);
}

#[test]
fn full_session_trains_and_replays_cleanly() {
    let r = run_session(cfg(Condition::Full)).unwrap();
    assert!(r.complete);
    assert!(r.hot_swaps() > 0);
    assert_eq!(r.final_policy.version as usize, r.hot_swaps());
    let summary = check_invariants(&r.events).unwrap();
    assert_eq!(summary.hot_swaps, r.hot_swaps());
    assert_eq!(summary.final_generation, r.generation);
    let mut skills = r.skills.clone();
    skills.sort();
    assert_eq!(summary.skills, skills);
}

#[test]
fn event_log_round_trips_and_tampering_is_caught() {
    let r = run_session(cfg(Condition::Full)).unwrap();
    let text = events_to_string(&r.events);
    let back = read_events(text.as_bytes()).unwrap();
    assert_eq!(back, r.events);
    let mut tampered = r.events.clone();
    let swap = tampered.iter().position(|e| matches!(e, Event::HotSwap { .. })).unwrap();
    tampered.insert(swap, tampered[swap].clone());
    assert!(check_invariants(&tampered).is_err());
}

#[test]
fn same_seed_same_log() {
    let a = run_session(cfg(Condition::Full).with_seed(5)).unwrap();
    let b = run_session(cfg(Condition::Full).with_seed(5)).unwrap();
    assert_eq!(events_to_string(&a.events), events_to_string(&b.events));
    let c = run_session(cfg(Condition::Full).with_seed(6)).unwrap();
    assert_ne!(events_to_string(&a.events), events_to_string(&c.events));
}

#[test]
fn comparison_orders_conditions() {
    let (cmp, reports) = compare_conditions(&RuntimeConfig::default()).unwrap();
    assert!(reports.iter().all(|r| r.complete));
    assert!(cmp.skills_only.overall_accuracy > cmp.baseline.overall_accuracy);
    assert!(cmp.full.overall_accuracy > cmp.skills_only.overall_accuracy);
    assert!(cmp.full.completion_rate > cmp.skills_only.completion_rate);
}

#[test]
fn session_persists_library_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(Condition::SkillsOnly);
    c.paths.skills_dir = Some(dir.path().join("skills"));
    c.paths.report_out = Some(dir.path().join("out"));
    let r = run_session(c).unwrap();
    let lib = skill_store::load(&dir.path().join("skills")).unwrap();
    assert_eq!(lib.generation(), r.generation);
    assert_eq!(lib.names(), r.skills.iter().map(String::as_str).collect::<Vec<_>>());
    for file in ["events.jsonl", "report.json", "scores.csv"] {
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
}

#[test]
fn malformed_evolver_output_does_not_stop_the_session() {
    let replies = (0..200).map(|_| Ok("no skills here".to_string())).collect();
    let r = run_session_with_client(cfg(Condition::SkillsOnly), Box::new(FixtureClient::new(replies))).unwrap();
    assert!(r.complete, "{:?}", r.error);
    assert!(r.skills.is_empty());
    assert!(r.generation >= 1);
    assert!(r
        .events
        .iter()
        .any(|e| matches!(e, Event::Evolution { malformed: Some(_), .. })));
}

#[test]
fn invalid_config_is_rejected() {
    assert!(run_session(RuntimeConfig { alpha: 2.0, ..Default::default() }).is_err());
    let c = RuntimeConfig::default().apply_overrides([("METALOOP_NO_SUCH_KEY", "1")]);
    assert!(c.is_err());
    let c = RuntimeConfig::default().apply_overrides([("METALOOP_WORKDAY__MEETING_AFTER_ROUND", "null")]).unwrap();
    assert_eq!(c.workday.meeting_after_round, None);
}
