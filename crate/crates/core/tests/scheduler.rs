mod common;

use chrono::{Duration, NaiveTime};
use metaloop_core::scheduler::{
    calendar_busy, decide, parse_calendar_json, read_signal_trace, sleep_window_contains, CalendarEvent,
    IdleSignalState, SchedulerConfig, SchedulerError, Signal, SignalSource, SignalTrace, SleepWindow,
};
use proptest::prelude::*;

fn state(sleep: bool, idle: f64, busy: bool) -> IdleSignalState {
    IdleSignalState { sleep_idle: sleep, input_idle_minutes: idle, calendar_busy: busy, sampled_at: common::t0() }
}

fn hm(h: u32, m: u32) -> NaiveTime {
    NaiveTime::from_hms_opt(h, m, 0).unwrap()
}

#[test]
fn each_signal_opens_the_window_alone() {
    let cfg = SchedulerConfig::default();
    let eps = cfg.activity_epsilon_minutes;
    let d = decide(&state(true, eps, false), &cfg);
    assert!(d.open && d.reasons.contains(&Signal::Sleep));
    let d = decide(&state(false, cfg.idle_delta_minutes, false), &cfg);
    assert!(d.open && d.reasons.contains(&Signal::Inactivity));
    let d = decide(&state(false, eps, true), &cfg);
    assert!(d.open && d.reasons.contains(&Signal::Calendar));
    assert!(!decide(&state(false, eps, false), &cfg).open);
}

#[test]
fn recent_input_overrides_every_signal() {
    let cfg = SchedulerConfig::default();
    let d = decide(&state(true, 0.0, true), &cfg);
    assert!(!d.open);
    assert_eq!(d.closed_by, Some(Signal::Inactivity));
    assert_eq!(decide(&state(false, 0.0, false), &cfg).closed_by, None);
}

#[test]
fn sleep_window_wraps_midnight() {
    let w = SleepWindow::parse("23:00", "07:00").unwrap();
    assert!(w.contains(hm(23, 0)));
    assert!(w.contains(hm(2, 30)));
    assert!(!w.contains(hm(7, 0)));
    assert!(!w.contains(hm(12, 0)));
    assert!(matches!(SleepWindow::parse("09:00", "09:00"), Err(SchedulerError::DegenerateWindow(_))));
    assert!(SleepWindow::parse("25:00", "07:00").is_err());
}

#[test]
fn calendar_events_are_half_open() {
    let ev = CalendarEvent { start: common::t0(), end: common::t0() + Duration::hours(1) };
    assert!(calendar_busy(common::t0(), std::slice::from_ref(&ev)));
    assert!(!calendar_busy(ev.end, std::slice::from_ref(&ev)));
    let parsed = parse_calendar_json(r#"[{"start":"2026-03-16T01:00:00Z","end":"2026-03-16T02:00:00Z"}]"#).unwrap();
    assert_eq!(parsed[0].start, ev.start);
    assert!(parse_calendar_json("{").is_err());
}

#[test]
fn trace_lines_parse_and_report_errors() {
    let good = "{\"sleep_idle\":false,\"input_idle_minutes\":45.0,\"calendar_busy\":false,\"sampled_at\":\"2026-03-16T04:00:00Z\"}\n\n";
    let trace = read_signal_trace(good.as_bytes()).unwrap();
    assert_eq!(trace.samples().len(), 1);
    assert_eq!(trace.at(common::t0()), IdleSignalState::present(common::t0()));
    let later = common::t0() + Duration::hours(4);
    assert_eq!(trace.at(later).input_idle_minutes, 45.0);

    let bad = format!("{good}not json\n");
    assert!(matches!(read_signal_trace(bad.as_bytes()), Err(SchedulerError::BadTrace { line: 3, .. })));
    let negative = good.replace("45.0", "-1.0");
    assert!(matches!(read_signal_trace(negative.as_bytes()), Err(SchedulerError::BadTrace { line: 1, .. })));
}

#[test]
fn composite_source_uses_local_time_and_local_events() {
    let cfg = SchedulerConfig::default();
    let mut src = SignalSource::from_config(&cfg).unwrap();
    let offset = Duration::minutes(cfg.utc_offset_minutes as i64);
    let sleep = cfg.sleep_window().unwrap();
    let mut at = common::t0();
    for _ in 0..48 {
        let s = src.sample(at).unwrap();
        assert_eq!(s.sleep_idle, sleep.contains((at + offset).time()));
        at += Duration::minutes(30);
    }
    let meeting = CalendarEvent { start: common::t0(), end: common::t0() + Duration::minutes(30) };
    src.add_calendar_events([meeting]);
    assert!(src.sample(common::t0()).unwrap().calendar_busy);
    assert!(!src.sample(common::t0() + Duration::minutes(30)).unwrap().calendar_busy);
}

#[test]
fn trace_source_ignores_local_events() {
    let mut src = SignalSource::Trace(SignalTrace::new(vec![]));
    src.add_calendar_events([CalendarEvent { start: common::t0(), end: common::t0() + Duration::hours(1) }]);
    assert!(!src.sample(common::t0()).unwrap().calendar_busy);
}

proptest! {
    #[test]
    fn decide_matches_definition(sleep: bool, busy: bool, idle in 0.0f64..120.0) {
        let cfg = SchedulerConfig::default();
        let d = decide(&state(sleep, idle, busy), &cfg);
        let any = sleep || busy || idle >= cfg.idle_delta_minutes;
        prop_assert_eq!(d.open, any && idle >= cfg.activity_epsilon_minutes);
        prop_assert_eq!(d.open, !d.reasons.is_empty());
        if d.open {
            prop_assert_eq!(d.reasons.contains(&Signal::Sleep), sleep);
            prop_assert_eq!(d.reasons.contains(&Signal::Calendar), busy);
        }
    }

    #[test]
    fn wrapping_window_is_complement_of_its_inverse(sh in 0u32..24, sm in 0u32..60, eh in 0u32..24, em in 0u32..60, t in 0u32..1440) {
        prop_assume!((sh, sm) != (eh, em));
        let w = SleepWindow::new(hm(sh, sm), hm(eh, em)).unwrap();
        let inv = SleepWindow::new(hm(eh, em), hm(sh, sm)).unwrap();
        let now = hm(t / 60, t % 60);
        prop_assert_ne!(sleep_window_contains(now, &w), sleep_window_contains(now, &inv));
        prop_assert_eq!(w.contains(w.start()), true);
        prop_assert_eq!(w.contains(w.end()), false);
    }
}
