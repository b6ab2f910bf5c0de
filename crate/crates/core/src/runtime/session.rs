use std::fs::{self, File};
use std::io::BufWriter;
use std::thread;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::driver::{TickDriver, TickInputs};
use super::events::{write_events, Event};
use super::{Condition, EvolverSpec, RuntimeConfig, RuntimeError};
use crate::buffer::{save_snapshot, BufferState, Route};
use crate::evolution::{apply_outcome, evolve_llm, evolve_rule_based, should_evolve, EvolverClient, HttpEvolverClient};
use crate::rules::RuleId;
use crate::scheduler::{decide, SignalSource, TickContext};
use crate::simbench::{
    aggregate, derive_seed, generate_stream, simulate_policy, write_scores_csv, write_stream, Metrics, ScoredTask,
    TaskSpec, Workspace,
};
use crate::skill_store::{self, HashingEmbedder, Retriever, SkillLibrary};
use crate::trainer::{score_in, PolicySlot, PolicyState, RunConfig, TrainRun};

const TRAIN_SEED_SALT: u64 = 0x0074_7261_696e;
const EVOLVER_TIMEOUT_SECS: u64 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub day: u32,
    pub generation: u64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub at: DateTime<Utc>,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlushRecord {
    pub at: DateTime<Utc>,
    pub generation: u64,
    pub flushed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub condition: Condition,
    pub seed: u64,
    pub complete: bool,
    pub error: Option<String>,
    pub metrics: Option<Metrics>,
    pub library_growth: Vec<GrowthPoint>,
    pub training: Vec<TrainingRecord>,
    pub flushes: Vec<FlushRecord>,
    pub skills: Vec<String>,
    pub generation: u64,
    pub final_policy: PolicyState,
    #[serde(skip)]
    pub results: Vec<ScoredTask>,
    #[serde(skip)]
    pub events: Vec<Event>,
}

impl SessionReport {
    /// Completion over file-check tasks on days with at least `rules` rules active.
    pub fn completion_on_days_with(&self, rules: usize) -> Option<f64> {
        Metrics::completion_over(&self.results, |d| RuleId::active_on(d).len() >= rules)
    }

    pub fn completion_on_days(&self, days: std::ops::RangeInclusive<u32>) -> Option<f64> {
        Metrics::completion_over(&self.results, |d| days.contains(&d))
    }

    pub fn hot_swaps(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::HotSwap { .. })).count()
    }
}

/// What one call to `Session::step` did.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: String,
    pub value: f64,
    pub route: Option<Route>,
    pub evolved_to: Option<u64>,
    pub flushed: usize,
}

enum Evolver {
    RuleBased,
    Llm(Box<dyn EvolverClient + Send>),
}

/// One simulated deployment: the task stream, the meta-model and the
/// scheduler, advanced task by task on a virtual clock.
pub struct Session {
    cfg: RuntimeConfig,
    tasks: Vec<TaskSpec>,
    next: usize,
    library: SkillLibrary,
    buffers: BufferState,
    slot: PolicySlot,
    retriever: Retriever<HashingEmbedder>,
    signals: Option<SignalSource>,
    driver: TickDriver,
    evolver: Evolver,
    next_tick: Option<DateTime<Utc>>,
    events: Vec<Event>,
    results: Vec<ScoredTask>,
    workspace: Workspace,
    last_outcome: Option<String>,
    train_mark: u64,
    growth: Vec<GrowthPoint>,
}

impl Session {
    pub fn new(cfg: RuntimeConfig) -> Result<Self, RuntimeError> {
        let evolver = match &cfg.evolver {
            EvolverSpec::RuleBased => Evolver::RuleBased,
            EvolverSpec::Http(url) => Evolver::Llm(Box::new(HttpEvolverClient::new(
                url.clone(),
                std::time::Duration::from_secs(EVOLVER_TIMEOUT_SECS),
            ))),
        };
        Self::with_evolver(cfg, evolver)
    }

    /// Uses `client` for skill evolution instead of the configured evolver.
    pub fn with_client(cfg: RuntimeConfig, client: Box<dyn EvolverClient + Send>) -> Result<Self, RuntimeError> {
        Self::with_evolver(cfg, Evolver::Llm(client))
    }

    fn with_evolver(cfg: RuntimeConfig, evolver: Evolver) -> Result<Self, RuntimeError> {
        cfg.validate()?;
        let tasks = generate_stream(&cfg.stream);
        let signals = if cfg.condition.trains() {
            let mut source = SignalSource::from_config(&cfg.scheduler)?;
            source.add_calendar_events(cfg.meetings());
            Some(source)
        } else {
            None
        };
        let start = cfg.task_time(1, 1);
        let events = vec![Event::SessionStart {
            at: start,
            condition: cfg.condition,
            seed: cfg.stream.seed,
            flush_mode: cfg.flush_mode,
            buffer_capacity: cfg.buffer_capacity,
            tasks: tasks.len(),
        }];
        Ok(Session {
            buffers: BufferState::new(cfg.flush_mode, cfg.buffer_capacity),
            slot: PolicySlot::new(cfg.initial_policy.clone()),
            retriever: Retriever::new(HashingEmbedder::default()),
            library: SkillLibrary::new(),
            driver: TickDriver::new(),
            next: 0,
            next_tick: None,
            results: Vec::with_capacity(tasks.len()),
            workspace: Workspace::new(),
            last_outcome: None,
            train_mark: 0,
            growth: Vec::new(),
            signals,
            evolver,
            events,
            tasks,
            cfg,
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn library(&self) -> &SkillLibrary {
        &self.library
    }

    pub fn buffers(&self) -> &BufferState {
        &self.buffers
    }

    pub fn policy(&self) -> std::sync::Arc<PolicyState> {
        self.slot.current()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_done(&self) -> bool {
        self.next >= self.tasks.len()
    }

    fn tick_context(&self) -> TickContext {
        let rl = self.buffers.rl();
        TickContext {
            train_ready: rl.is_train_ready(self.cfg.batch_size),
            pending_work: rl.appended_total().saturating_sub(self.train_mark) >= self.cfg.batch_size as u64,
            generation: self.library.generation(),
        }
    }

    fn tick(&mut self, at: DateTime<Utc>, budget: u64) -> Result<(), RuntimeError> {
        let Some(signals) = self.signals.as_mut() else { return Ok(()) };
        let decision = decide(&signals.sample(at)?, &self.cfg.scheduler);
        let ctx = self.tick_context();
        let run_cfg = RunConfig {
            batches: self.cfg.batches_per_run,
            batch_size: self.cfg.batch_size,
            alpha: self.cfg.alpha,
            seed: 0,
        };
        let train_seed = derive_seed(self.cfg.stream.seed, TRAIN_SEED_SALT);
        let buffers = &self.buffers;
        let theta = self.slot.current();
        let runs_before = self.driver.runs_started();
        let mut planner = |run_index: u64| {
            let cfg = RunConfig { seed: derive_seed(train_seed, run_index), ..run_cfg };
            TrainRun::plan(buffers.rl(), buffers.generation(), (*theta).clone(), &cfg)
        };
        let finished = self.driver.tick(at, &decision, TickInputs { ctx, budget, planner: &mut planner }, &mut self.events)?;
        if self.driver.runs_started() > runs_before {
            self.train_mark = self.buffers.rl().appended_total();
        }
        if let Some((done_at, trained)) = finished {
            let base = self.slot.current();
            let version = self.slot.hot_swap(trained.successor_of(&base))?;
            self.events.push(Event::HotSwap { at: done_at, version });
        }
        Ok(())
    }

    /// Runs scheduler ticks up to `t`, registers user input at `t` and
    /// performs the between-task check at `t` itself.
    fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), RuntimeError> {
        if self.signals.is_none() {
            return Ok(());
        }
        let tick = Duration::seconds(self.cfg.scheduler.tick_seconds as i64);
        let mut at = self.next_tick.unwrap_or(t);
        while at < t {
            let budget = (t - at).num_seconds().min(tick.num_seconds()) as u64;
            self.tick(at, budget)?;
            at += tick;
        }
        if let Some(signals) = self.signals.as_mut() {
            signals.note_input(t);
        }
        self.tick(t, 0)?;
        self.next_tick = Some(t + tick);
        Ok(())
    }

    /// Serves the next task. Returns None once the stream is exhausted.
    pub fn step(&mut self) -> Result<Option<TaskRecord>, RuntimeError> {
        let Some(task) = self.tasks.get(self.next).cloned() else { return Ok(None) };
        let index = self.next;
        let at = self.cfg.task_time(task.day_index, task.round_index);
        self.advance_to(at)?;

        let mut served = task.clone();
        served.prior_feedback = self.last_outcome.clone();
        let skills = if self.cfg.condition.evolves() {
            self.retriever.retrieve(&self.library, &served.context(), self.cfg.retrieval_k)
        } else {
            Vec::new()
        };
        let theta = self.slot.current();
        let generation = self.library.generation();
        self.events.push(Event::TaskStart {
            at,
            task_id: task.id.clone(),
            generation,
            policy_version: theta.version,
            skills: skills.iter().map(|s| s.name.clone()).collect(),
        });
        let seed = derive_seed(self.cfg.stream.seed, index as u64);
        let mut traj = simulate_policy(&theta, &served, &skills, &self.cfg.agent, seed, generation, at);
        drop(skills);
        self.workspace.begin_task(&served);
        self.workspace.apply_steps(&traj.actions)?;
        let score = score_in(&traj, &served, &self.workspace)?;
        traj.reward = score.value;
        traj.components = score.components;
        traj.feedback = score.feedback.clone();
        self.last_outcome =
            Some(if score.value >= 1.0 { "passed all checks".to_string() } else { score.feedback });
        self.results.push(ScoredTask::new(&task, score.value));

        let route = if self.cfg.condition.evolves() {
            Some(self.buffers.record(traj, &self.cfg.thresholds)?)
        } else {
            None
        };
        self.events.push(Event::TaskServed {
            at,
            task_id: task.id.clone(),
            day: task.day_index,
            round: task.round_index,
            kind: task.kind,
            value: score.value,
            route,
            generation,
            policy_version: theta.version,
            buffer_len: self.buffers.rl().len(),
            min_generation: self.buffers.rl().min_generation(),
            support_len: self.buffers.support().len(),
        });

        let mut record = TaskRecord { task_id: task.id.clone(), value: score.value, route, evolved_to: None, flushed: 0 };
        if self.cfg.condition.evolves() && should_evolve(self.buffers.support().len(), self.cfg.evolve_threshold) {
            let (to, flushed) = self.evolve(at)?;
            record.evolved_to = Some(to);
            record.flushed = flushed;
        }
        self.next += 1;
        let day_over = self.tasks.get(self.next).is_none_or(|t| t.day_index != task.day_index);
        if day_over {
            self.end_day(task.day_index, at)?;
        }
        Ok(Some(record))
    }

    fn evolve(&mut self, at: DateTime<Utc>) -> Result<(u64, usize), RuntimeError> {
        let failures = self.buffers.support().records().to_vec();
        let from = self.library.generation();
        let (outcome, malformed) = match &self.evolver {
            Evolver::RuleBased => (evolve_rule_based(&self.library, &failures, self.cfg.max_new_skills, at), None),
            Evolver::Llm(client) => {
                let r = evolve_llm(client.as_ref(), &self.library, &failures, self.cfg.max_new_skills, at)?;
                (r.outcome, r.malformed.map(|e| e.to_string()))
            }
        };
        let applied = apply_outcome(&mut self.library, &mut self.buffers, outcome)?;
        let to = self.library.generation();
        self.events.push(Event::Evolution {
            at,
            from_generation: from,
            to_generation: to,
            added: applied.added,
            consumed: failures.len(),
            malformed,
        });
        self.events.push(Event::Flush {
            at,
            generation: applied.flush.generation,
            flushed: applied.flushed,
            buffer_len: self.buffers.rl().len(),
            min_generation: self.buffers.rl().min_generation(),
        });
        if let Some(dir) = &self.cfg.paths.skills_dir {
            skill_store::save(&self.library, dir)?;
        }
        Ok((to, applied.flushed))
    }

    fn end_day(&mut self, day: u32, at: DateTime<Utc>) -> Result<(), RuntimeError> {
        let rows: Vec<ScoredTask> = self.results.iter().filter(|r| r.day_index == day).cloned().collect();
        let day_metrics = aggregate(&rows)?;
        let m = &day_metrics.per_day[0];
        self.events.push(Event::DayEnd {
            at,
            day,
            generation: self.library.generation(),
            library_size: self.library.len(),
            policy_version: self.slot.version(),
            accuracy: m.accuracy,
            completion: m.completion,
        });
        self.growth.push(GrowthPoint { day, generation: self.library.generation(), size: self.library.len() });
        self.last_outcome = None;
        if let Some(path) = &self.cfg.paths.buffer_snapshot {
            save_snapshot(self.buffers.rl(), path)?;
        }
        Ok(())
    }

    /// Closes the log and builds the report.
    pub fn finish(mut self, error: Option<String>) -> SessionReport {
        let at = self.events.last().map(Event::at).unwrap_or_else(|| self.cfg.task_time(1, 1));
        let complete = error.is_none() && self.is_done();
        self.events.push(Event::SessionEnd { at, complete, error: error.clone() });
        let training = self
            .events
            .iter()
            .filter(|e| e.is_training() && !matches!(e, Event::TrainSteps { .. } | Event::BatchDone { .. }))
            .map(|e| TrainingRecord { at: e.at(), kind: e.name().to_string() })
            .collect();
        let flushes = self
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Flush { at, generation, flushed, .. } => {
                    Some(FlushRecord { at: *at, generation: *generation, flushed: *flushed })
                }
                _ => None,
            })
            .collect();
        SessionReport {
            condition: self.cfg.condition,
            seed: self.cfg.stream.seed,
            complete,
            error,
            metrics: aggregate(&self.results).ok(),
            library_growth: self.growth,
            training,
            flushes,
            skills: self.library.names().into_iter().map(str::to_string).collect(),
            generation: self.library.generation(),
            final_policy: (*self.slot.current()).clone(),
            results: self.results,
            events: self.events,
        }
    }

    fn persist_workspace(&self) -> Result<(), RuntimeError> {
        if let Some(dir) = &self.cfg.paths.report_out {
            self.workspace.save_to(&dir.join("workspace"))?;
        }
        Ok(())
    }
}

/// Runs the whole stream. Module errors end the run early with a report
/// marked incomplete; only configuration problems are returned as errors.
pub fn run_session(cfg: RuntimeConfig) -> Result<SessionReport, RuntimeError> {
    let session = Session::new(cfg)?;
    drive(session)
}

pub fn run_session_with_client(
    cfg: RuntimeConfig,
    client: Box<dyn EvolverClient + Send>,
) -> Result<SessionReport, RuntimeError> {
    drive(Session::with_client(cfg, client)?)
}

fn drive(mut session: Session) -> Result<SessionReport, RuntimeError> {
    let mut error = None;
    loop {
        match session.step() {
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    if let Err(e) = session.persist_workspace() {
        error.get_or_insert(e.to_string());
    }
    let out = session.cfg.paths.report_out.clone();
    let tasks = session.tasks.clone();
    let report = session.finish(error);
    if let Some(dir) = out {
        write_report(&report, &tasks, &dir)?;
    }
    Ok(report)
}

pub fn write_report(report: &SessionReport, tasks: &[TaskSpec], dir: &std::path::Path) -> Result<(), RuntimeError> {
    fs::create_dir_all(dir)?;
    write_events(&report.events, BufWriter::new(File::create(dir.join("events.jsonl"))?))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    write_scores_csv(&report.results, File::create(dir.join("scores.csv"))?)?;
    write_stream(tasks, BufWriter::new(File::create(dir.join("stream.jsonl"))?))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub overall_accuracy: f64,
    pub completion_rate: f64,
    /// Completion on days with at least four rules active.
    pub multi_rule_completion: Option<f64>,
    pub per_day_completion: Vec<Option<f64>>,
    pub generation: u64,
    pub hot_swaps: usize,
}

impl ConditionSummary {
    pub fn from_report(report: &SessionReport) -> Self {
        let metrics = report.metrics.clone();
        ConditionSummary {
            condition: report.condition,
            overall_accuracy: metrics.as_ref().map_or(0.0, |m| m.overall_accuracy),
            completion_rate: metrics.as_ref().map_or(0.0, |m| m.completion_rate),
            multi_rule_completion: report.completion_on_days_with(4),
            per_day_completion: metrics.map(|m| m.per_day.iter().map(|d| d.completion).collect()).unwrap_or_default(),
            generation: report.generation,
            hot_swaps: report.hot_swaps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub skills_vs_baseline_accuracy: f64,
    pub full_vs_skills_accuracy: f64,
    pub skills_vs_baseline_completion: f64,
    pub full_vs_skills_completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub baseline: ConditionSummary,
    pub skills_only: ConditionSummary,
    pub full: ConditionSummary,
    pub deltas: Deltas,
}

impl Comparison {
    fn new(seed: u64, reports: [&SessionReport; 3]) -> Self {
        let [b, s, f] = reports.map(ConditionSummary::from_report);
        let deltas = Deltas {
            skills_vs_baseline_accuracy: s.overall_accuracy - b.overall_accuracy,
            full_vs_skills_accuracy: f.overall_accuracy - s.overall_accuracy,
            skills_vs_baseline_completion: s.completion_rate - b.completion_rate,
            full_vs_skills_completion: f.completion_rate - s.completion_rate,
        };
        Comparison { seed, baseline: b, skills_only: s, full: f, deltas }
    }
}

/// Runs all three conditions on the same stream, in parallel.
pub fn compare_conditions(cfg: &RuntimeConfig) -> Result<(Comparison, [SessionReport; 3]), RuntimeError> {
    let reports: Vec<Result<SessionReport, RuntimeError>> = thread::scope(|scope| {
        let handles: Vec<_> = Condition::ALL
            .iter()
            .map(|&c| {
                let mut cfg = cfg.clone().with_condition(c);
                cfg.paths.report_out = cfg.paths.report_out.map(|d| d.join(c.as_str()));
                scope.spawn(move || run_session(cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("session thread panicked")).collect()
    });
    let mut it = reports.into_iter();
    let reports = [it.next().expect("3")?, it.next().expect("3")?, it.next().expect("3")?];
    for r in &reports {
        if let Some(e) = &r.error {
            return Err(RuntimeError::Incomplete(format!("{}: {e}", r.condition.as_str())));
        }
    }
    let comparison = Comparison::new(cfg.stream.seed, [&reports[0], &reports[1], &reports[2]]);
    Ok((comparison, reports))
}
