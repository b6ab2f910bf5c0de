//! Background trainer thread for live mode. The scheduler drives it through
//! `TrainerHandle`; finished policies come back on the event channel and
//! are installed by the orchestrator between tasks.

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use chrono::Utc;

use super::{BatchLog, PolicySlot, PolicyState, RunConfig, StepOutcome, TrainRun};
use crate::buffer::SharedBuffer;
use crate::scheduler::{SchedulerError, TrainerCheckpoint, TrainerHandle};
use crate::simbench::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub enum WorkerEvent {
    Batch(BatchLog),
    Completed(PolicyState),
    Failed(String),
}

enum Cmd {
    Start(u64),
    Pause(u64),
    Resume(u64, TrainerCheckpoint),
    Discard(u64),
    Shutdown,
}

enum Reply {
    Done(u64),
    Paused(u64, TrainerCheckpoint),
    Failed(u64, String),
}

impl Reply {
    fn seq(&self) -> u64 {
        match self {
            Reply::Done(s) | Reply::Paused(s, _) | Reply::Failed(s, _) => *s,
        }
    }
}

struct Worker {
    buffer: SharedBuffer,
    slot: Arc<PolicySlot>,
    cfg: RunConfig,
    step_delay: Duration,
    replies: Sender<Reply>,
    events: Sender<WorkerEvent>,
    run: Option<TrainRun>,
    running: bool,
    runs_started: u64,
}

impl Worker {
    fn handle(&mut self, cmd: Cmd) -> bool {
        let reply = match cmd {
            Cmd::Shutdown => return false,
            Cmd::Start(seq) => {
                let planned = {
                    let buffer = self.buffer.lock().expect("buffer lock poisoned");
                    let cfg = RunConfig { seed: derive_seed(self.cfg.seed, self.runs_started), ..self.cfg };
                    TrainRun::plan(buffer.rl(), buffer.generation(), (*self.slot.current()).clone(), &cfg)
                };
                match planned {
                    Ok(run) => {
                        self.runs_started += 1;
                        self.run = Some(run);
                        self.running = true;
                        Reply::Done(seq)
                    }
                    Err(e) => Reply::Failed(seq, e.to_string()),
                }
            }
            Cmd::Pause(seq) => match self.run.as_mut() {
                Some(run) => {
                    self.running = false;
                    Reply::Paused(seq, run.checkpoint())
                }
                None => Reply::Failed(seq, "no run to pause".into()),
            },
            Cmd::Resume(seq, ckpt) => match self.run.as_mut().map(|run| run.restore(&ckpt)) {
                Some(Ok(())) => {
                    self.running = true;
                    Reply::Done(seq)
                }
                Some(Err(e)) => Reply::Failed(seq, e.to_string()),
                None => Reply::Failed(seq, "no run to resume".into()),
            },
            Cmd::Discard(seq) => {
                self.run = None;
                self.running = false;
                Reply::Done(seq)
            }
        };
        self.replies.send(reply).is_ok()
    }

    fn step(&mut self) {
        let Some(run) = self.run.as_mut() else {
            self.running = false;
            return;
        };
        let generation = self.buffer.lock().expect("buffer lock poisoned").generation();
        let event = match run.step(generation, Utc::now()) {
            Ok(StepOutcome::Stepped) => None,
            Ok(StepOutcome::BatchDone(log)) => Some(WorkerEvent::Batch(log)),
            Ok(StepOutcome::Finished(log)) => {
                let _ = self.events.send(WorkerEvent::Batch(log));
                let theta = self.run.take().expect("run present").into_theta();
                self.running = false;
                Some(WorkerEvent::Completed(theta))
            }
            Err(e) => {
                self.run = None;
                self.running = false;
                Some(WorkerEvent::Failed(e.to_string()))
            }
        };
        if let Some(event) = event {
            let _ = self.events.send(event);
        }
        if !self.step_delay.is_zero() {
            thread::sleep(self.step_delay);
        }
    }

    fn main(mut self, cmds: Receiver<Cmd>) {
        loop {
            let cmd = if self.running {
                match cmds.try_recv() {
                    Ok(cmd) => Some(cmd),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => return,
                }
            } else {
                match cmds.recv() {
                    Ok(cmd) => Some(cmd),
                    Err(_) => return,
                }
            };
            match cmd {
                Some(cmd) => {
                    if !self.handle(cmd) {
                        return;
                    }
                }
                None => self.step(),
            }
        }
    }
}

pub struct TrainerWorker {
    cmds: Sender<Cmd>,
    replies: Receiver<Reply>,
    events: Receiver<WorkerEvent>,
    grace: Duration,
    seq: u64,
    thread: Option<JoinHandle<()>>,
}

impl TrainerWorker {
    /// `step_delay` throttles the thread between steps.
    pub fn spawn(buffer: SharedBuffer, slot: Arc<PolicySlot>, cfg: RunConfig, grace: Duration, step_delay: Duration) -> Self {
        let (cmd_tx, cmd_rx) = mpsc::channel();
        let (reply_tx, reply_rx) = mpsc::channel();
        let (event_tx, event_rx) = mpsc::channel();
        let worker = Worker {
            buffer,
            slot,
            cfg,
            step_delay,
            replies: reply_tx,
            events: event_tx,
            run: None,
            running: false,
            runs_started: 0,
        };
        let thread = thread::Builder::new()
            .name("trainer".into())
            .spawn(move || worker.main(cmd_rx))
            .expect("spawn trainer thread");
        TrainerWorker { cmds: cmd_tx, replies: reply_rx, events: event_rx, grace, seq: 0, thread: Some(thread) }
    }

    /// Events produced since the last call.
    pub fn drain_events(&self) -> Vec<WorkerEvent> {
        self.events.try_iter().collect()
    }

    /// Blocks until an event arrives or `timeout` passes.
    pub fn next_event(&self, timeout: Duration) -> Option<WorkerEvent> {
        self.events.recv_timeout(timeout).ok()
    }

    fn request(&mut self, make: impl FnOnce(u64) -> Cmd) -> Result<Reply, SchedulerError> {
        self.seq += 1;
        let seq = self.seq;
        self.cmds.send(make(seq)).map_err(|_| SchedulerError::TrainerGone("command channel closed".into()))?;
        let deadline = Instant::now() + self.grace;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.replies.recv_timeout(left) {
                Ok(reply) if reply.seq() == seq => return Ok(reply),
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(SchedulerError::TrainerUnresponsive(self.grace.as_millis() as u64))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(SchedulerError::TrainerGone("reply channel closed".into()))
                }
            }
        }
    }
}

fn expect_done(reply: Reply) -> Result<(), SchedulerError> {
    match reply {
        Reply::Done(_) => Ok(()),
        Reply::Failed(_, msg) => Err(SchedulerError::TrainerGone(msg)),
        Reply::Paused(..) => Err(SchedulerError::TrainerGone("unexpected pause reply".into())),
    }
}

impl TrainerHandle for TrainerWorker {
    fn start(&mut self) -> Result<(), SchedulerError> {
        expect_done(self.request(Cmd::Start)?)
    }

    fn pause(&mut self) -> Result<TrainerCheckpoint, SchedulerError> {
        match self.request(Cmd::Pause)? {
            Reply::Paused(_, ckpt) => Ok(ckpt),
            Reply::Failed(_, msg) => Err(SchedulerError::TrainerGone(msg)),
            Reply::Done(_) => Err(SchedulerError::TrainerGone("unexpected reply to pause".into())),
        }
    }

    fn resume(&mut self, checkpoint: TrainerCheckpoint) -> Result<(), SchedulerError> {
        expect_done(self.request(|seq| Cmd::Resume(seq, checkpoint))?)
    }

    fn discard(&mut self) {
        self.seq += 1;
        let _ = self.cmds.send(Cmd::Discard(self.seq));
    }
}

impl Drop for TrainerWorker {
    fn drop(&mut self) {
        let _ = self.cmds.send(Cmd::Shutdown);
        if let Some(handle) = self.thread.take() {
            let _ = handle.join();
        }
    }
}
