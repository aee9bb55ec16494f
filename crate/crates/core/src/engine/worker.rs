//! Workers: claim tasks from the queue and drive processes forward.
//!
//! A worker holds up to `prefetch` tasks. Every tick it answers control
//! requests for the tasks it holds, claims more tasks, and activates each
//! held process that is due exactly once: a work chain runs one step, a
//! calculation job advances one stage, a process function runs to the end.
//! Every transaction that changes a held process first checks the lease,
//! so a worker that lost a task (declared unreachable, task redelivered)
//! cannot write on its behalf. A separate communication lane with its own
//! connection sends heartbeats and reaps workers that stopped sending them.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rusqlite::params;
use uuid::Uuid;

use crate::caching;
use crate::error::{Error, Result};
use crate::process::calcjob::{self, CalcJobDef, CalcJobState, Stage};
use crate::process::functions::execute_function;
use crate::process::scheduler::{Lookup, SimScheduler, SchedulerAdapter, StatusCache};
use crate::process::transport::{Acquire, Computer, TransportPool, DEFAULT_COMPUTER};
use crate::process::workchain::{check_children, run_step, Children, StepOutcome, WorkChainDef, WorkChainState};
use crate::process::{inputs_of, Body, Env, ProcessDef, Registry};
use crate::store::{unix_now, Store, Tx};

use super::backoff::{Decision, Fault, MAX_RETRIES};
use super::checkpoint::{self, Checkpoint, CheckpointBody};
use super::config::{EngineConfig, Mode};
use super::control;
use super::queue;
use super::rpc;
use super::state::{self, Change, ProcessState};
use super::workers;

#[derive(Debug, Clone, Copy)]
struct Held {
    lease: i64,
    wake_at: f64,
}

/// What to do with a held task after an activation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Next {
    /// Keep holding it; activate again at this time.
    Keep(f64),
    /// The task left this worker (acked, parked, released or lost).
    Drop,
}

pub struct Worker {
    id: String,
    channel: String,
    store: Store,
    env: Env,
    config: EngineConfig,
    pool: TransportPool,
    cache: StatusCache,
    held: BTreeMap<Uuid, Held>,
    /// In polling mode, the boundary being processed.
    clock: Option<f64>,
}

impl Worker {
    pub fn new(root: impl Into<PathBuf>, registry: Arc<Registry>, id: &str, channel: &str) -> Result<Worker> {
        let store = Store::open(root.into())?;
        let config = store.read(EngineConfig::load)?;
        let mut env = Env::new(registry);
        env.caching = config.caching.clone();
        Ok(Worker {
            id: id.to_string(),
            channel: channel.to_string(),
            store,
            env,
            config,
            pool: TransportPool::new(),
            cache: StatusCache::new(),
            held: BTreeMap::new(),
            clock: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Processes currently held.
    pub fn held(&self) -> Vec<Uuid> {
        self.held.keys().copied().collect()
    }

    /// Connection openings so far, as (computer, time).
    pub fn connection_log(&self) -> &[(String, f64)] {
        self.pool.open_log()
    }

    /// Scheduler listings performed so far.
    pub fn scheduler_calls(&self) -> u64 {
        self.cache.calls()
    }

    fn now(&self) -> f64 {
        self.clock.unwrap_or_else(unix_now)
    }

    fn fence(&self, tx: &Tx<'_>, uuid: Uuid) -> Result<()> {
        let lease = self.held.get(&uuid).map(|h| h.lease).ok_or(Error::LeaseLost(uuid))?;
        queue::check_lease(tx, uuid, &self.id, lease)
    }

    /// One scheduling round. Returns the number of activations.
    pub fn tick(&mut self) -> Result<usize> {
        self.answer_requests()?;
        let now = self.now();
        let room = self.config.prefetch.saturating_sub(self.held.len());
        if room > 0 {
            let (id, channel) = (self.id.clone(), self.channel.clone());
            let claims = self.store.write(|tx| queue::claim(tx, &id, &channel, room, now))?;
            if !claims.is_empty() {
                for c in claims {
                    self.held.insert(c.process_uuid, Held { lease: c.lease, wake_at: now });
                }
                self.answer_requests()?;
            }
        }
        let mut due: Vec<(f64, Uuid)> =
            self.held.iter().filter(|(_, h)| h.wake_at <= now).map(|(u, h)| (h.wake_at, *u)).collect();
        due.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, uuid) in &due {
            if !self.held.contains_key(uuid) {
                continue;
            }
            let next = match self.activate(*uuid) {
                Ok(n) => n,
                Err(Error::LeaseLost(_)) => Next::Drop,
                Err(e) if e.is_busy() => Next::Keep(now + self.config.tick),
                Err(e) => self.fail(*uuid, &e),
            };
            match next {
                Next::Keep(at) => {
                    if let Some(h) = self.held.get_mut(uuid) {
                        h.wake_at = at;
                    }
                }
                Next::Drop => {
                    self.held.remove(uuid);
                }
            }
        }
        self.pool.release_idle();
        Ok(due.len())
    }

    /// An activation failed for a reason other than the process itself:
    /// record it as an exception rather than retrying forever.
    fn fail(&self, uuid: Uuid, err: &Error) -> Next {
        let message = format!("engine error: {err}");
        let result = self.store.write(|tx| {
            self.fence(tx, uuid)?;
            control::end(tx, uuid, ProcessState::Excepted, Change { exception: Some(message.clone()), ..Default::default() })
        });
        if let Err(e) = result {
            eprintln!("worker {}: cannot record failure of {uuid}: {e}", self.id);
        }
        Next::Drop
    }

    fn answer_requests(&mut self) -> Result<()> {
        let pending = self.store.read(|tx| rpc::pending_for(tx, &self.id))?;
        let root = self.store.root().to_path_buf();
        for (id, uuid, action) in pending {
            if !self.held.contains_key(&uuid) {
                continue;
            }
            let kept = self.store.write(|tx| {
                self.fence(tx, uuid)?;
                rpc::answer(tx, &root, id, uuid, action)?;
                Ok(queue::check_lease(tx, uuid, &self.id, self.held[&uuid].lease).is_ok())
            });
            match kept {
                Ok(true) => {
                    // Requeue the process for prompt reevaluation.
                    if let Some(h) = self.held.get_mut(&uuid) {
                        h.wake_at = h.wake_at.min(self.clock.unwrap_or_else(unix_now));
                    }
                }
                Ok(false) | Err(Error::LeaseLost(_)) => {
                    self.held.remove(&uuid);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn activate(&mut self, uuid: Uuid) -> Result<Next> {
        let (status, def) = self.store.read(|tx| {
            self.fence(tx, uuid)?;
            let st = state::status(tx, uuid)?;
            let def = self.env.registry.get(&st.process_type);
            Ok((st, def))
        })?;
        if status.state.is_terminal() || status.state == ProcessState::Paused {
            self.store.write(|tx| {
                self.fence(tx, uuid)?;
                if status.state.is_terminal() {
                    queue::ack(tx, uuid)
                } else {
                    queue::park(tx, uuid, "paused")
                }
            })?;
            return Ok(Next::Drop);
        }
        let def = match def {
            Ok(d) => d,
            Err(e) => {
                let msg = format!("cannot load process type `{}`: {e}", status.process_type);
                self.store.write(|tx| {
                    self.fence(tx, uuid)?;
                    control::end(tx, uuid, ProcessState::Excepted, Change { exception: Some(msg), ..Default::default() })
                })?;
                return Ok(Next::Drop);
            }
        };
        match &def.body {
            Body::CalcFunction(_) | Body::WorkFunction(_) => self.activate_function(uuid, &def),
            Body::WorkChain(wc) => self.activate_workchain(uuid, &def, wc),
            Body::CalcJob(job) => self.activate_calcjob(uuid, &def, job),
        }
    }

    fn activate_function(&mut self, uuid: Uuid, def: &ProcessDef) -> Result<Next> {
        self.store.write(|tx| {
            self.fence(tx, uuid)?;
            let st = state::status(tx, uuid)?;
            if st.state == ProcessState::Created {
                let inputs = inputs_of(tx, uuid)?;
                execute_function(tx, &self.env, uuid, def, &inputs)?;
                queue::ack(tx, uuid)?;
            } else {
                // A function runs in one transaction; a live one past
                // `created` cannot be resumed.
                control::end(
                    tx,
                    uuid,
                    ProcessState::Excepted,
                    Change { exception: Some("process function interrupted".into()), ..Default::default() },
                )?;
            }
            Ok(Next::Drop)
        })
    }

    /// Parks (event mode) or defers (polling mode) a chain whose children
    /// are still running.
    fn await_children(&self, tx: &Tx<'_>, uuid: Uuid) -> Result<Next> {
        match self.config.mode {
            Mode::Event => queue::park(tx, uuid, "waiting")?,
            Mode::Polling => queue::release(tx, uuid, self.now() + self.config.poll_interval * 0.5, "waiting")?,
        }
        Ok(Next::Drop)
    }

    fn activate_workchain(&mut self, uuid: Uuid, def: &ProcessDef, wc: &WorkChainDef) -> Result<Next> {
        let now = self.now();
        self.store.write(|tx| {
            self.fence(tx, uuid)?;
            let mut st = state::status(tx, uuid)?;
            let mut ws = match checkpoint::load(tx, uuid)? {
                Some(Checkpoint { body: CheckpointBody::WorkChain(ws), .. }) => ws,
                Some(_) => return Err(Error::Config(format!("checkpoint of {uuid} is not a work chain checkpoint"))),
                None => WorkChainState::default(),
            };
            if st.state == ProcessState::Created {
                st = state::transition(tx, uuid, ProcessState::Running, Change::default())?;
            }
            if st.state == ProcessState::Waiting {
                match check_children(tx, &ws, wc.on_child_failure)? {
                    Children::Pending => return self.await_children(tx, uuid),
                    Children::Failed(msg) => {
                        control::end(tx, uuid, ProcessState::Excepted, Change { exception: Some(msg), ..Default::default() })?;
                        return Ok(Next::Drop);
                    }
                    Children::Done => {
                        ws.awaiting.clear();
                        state::transition(tx, uuid, ProcessState::Running, Change::default())?;
                    }
                }
            }
            let inputs = inputs_of(tx, uuid)?;
            match run_step(tx, &self.env, def, wc, uuid, &self.channel, &inputs, &mut ws)? {
                StepOutcome::Stepped { name, pc, awaiting } => {
                    tx.conn()
                        .prepare_cached(
                            "INSERT INTO step_log(process_uuid, step, pc, ordinal, worker, at) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                        )?
                        .execute(params![
                            uuid.to_string(),
                            name,
                            serde_json::to_string(&pc)?,
                            ws.steps_done as i64,
                            self.id,
                            unix_now()
                        ])?;
                    let to = if awaiting { ProcessState::Waiting } else { ProcessState::Running };
                    if awaiting {
                        state::transition(tx, uuid, ProcessState::Waiting, Change::default())?;
                    }
                    checkpoint::save(tx, uuid, &Checkpoint::new(&def.id, to, CheckpointBody::WorkChain(ws)))?;
                    if awaiting {
                        self.await_children(tx, uuid)
                    } else {
                        Ok(Next::Keep(now))
                    }
                }
                StepOutcome::Finished(code) => {
                    control::end(tx, uuid, ProcessState::Finished, Change { exit_code: Some(code), ..Default::default() })?;
                    Ok(Next::Drop)
                }
                StepOutcome::Excepted(msg) => {
                    for child in state::live_children(tx, uuid)? {
                        control::apply(tx, tx.store().root(), child, control::Action::Kill)?;
                    }
                    control::end(tx, uuid, ProcessState::Excepted, Change { exception: Some(msg), ..Default::default() })?;
                    Ok(Next::Drop)
                }
            }
        })
    }

    /// Keeps a short wait on this worker; longer waits give the task back.
    fn defer(&self, uuid: Uuid, at: f64) -> Result<Next> {
        let now = self.now();
        let limit = match self.config.mode {
            Mode::Event => self.config.hold_limit,
            Mode::Polling => self.config.hold_limit.max(self.config.poll_interval * 1.5),
        };
        if at - now <= limit {
            return Ok(Next::Keep(at));
        }
        self.store.write(|tx| {
            self.fence(tx, uuid)?;
            queue::release(tx, uuid, at, "deferred")
        })?;
        Ok(Next::Drop)
    }

    fn save_job(&self, tx: &Tx<'_>, uuid: Uuid, def: &ProcessDef, to: ProcessState, job: &CalcJobState) -> Result<()> {
        checkpoint::save(tx, uuid, &Checkpoint::new(&def.id, to, CheckpointBody::CalcJob(job.clone())))?;
        Ok(())
    }

    fn activate_calcjob(&mut self, uuid: Uuid, def: &ProcessDef, job: &CalcJobDef) -> Result<Next> {
        let (node, mut cj, computer) = self.store.read(|tx| {
            let node = tx.get_node_with_contents(uuid)?;
            let cj = match checkpoint::load(tx, uuid)? {
                Some(Checkpoint { body: CheckpointBody::CalcJob(cj), .. }) => cj,
                Some(_) => return Err(Error::Config(format!("checkpoint of {uuid} is not a calculation job checkpoint"))),
                None => CalcJobState::default(),
            };
            let computer = Computer::load(tx, node.computer().unwrap_or(DEFAULT_COMPUTER))?;
            Ok((node, cj, computer))
        })?;
        let computer = self.config.effective(&computer);
        let dir = computer.dir(self.store.root());
        if !cj.cache_checked {
            let cached = self.store.write(|tx| {
                self.fence(tx, uuid)?;
                if state::status(tx, uuid)?.state == ProcessState::Created {
                    state::transition(tx, uuid, ProcessState::Running, Change::default())?;
                }
                cj.cache_checked = true;
                if self.env.caching.is_enabled(&def.id) {
                    if let Some(source) = caching::find_cache_source(tx, uuid)? {
                        if caching::clone_outputs_from(tx, source, uuid)? {
                            state::report(tx, uuid, "cache", &format!("outputs cloned from {source}"))?;
                            control::end(tx, uuid, ProcessState::Finished, Change { exit_code: Some(0), ..Default::default() })?;
                            return Ok(true);
                        }
                    }
                }
                self.save_job(tx, uuid, def, ProcessState::Running, &cj)?;
                Ok(false)
            })?;
            if cached {
                return Ok(Next::Drop);
            }
            if self.config.mode == Mode::Polling {
                return Ok(Next::Keep(self.now() + self.config.poll_interval));
            }
        }
        let scheduler = SimScheduler::new(&dir, computer.scheduler.clone());
        loop {
            let now = self.now();
            let stage = cj.stage;
            let step: Result<Option<f64>, Fault> = match stage {
                Stage::Upload => match self.pool.acquire(&computer, &dir, now) {
                    Err(f) => Err(f),
                    Ok(Acquire::WaitUntil(t)) => Ok(Some(t)),
                    Ok(Acquire::Ready(t)) => {
                        let files: BTreeMap<String, Vec<u8>> = node
                            .files()
                            .iter()
                            .map(|(p, f)| (p.clone(), f.content.clone().unwrap_or_default()))
                            .collect();
                        calcjob::upload(t, uuid, &files).map(|_| None)
                    }
                },
                Stage::Submit => match self.pool.acquire(&computer, &dir, now) {
                    Err(f) => Err(f),
                    Ok(Acquire::WaitUntil(t)) => Ok(Some(t)),
                    Ok(Acquire::Ready(t)) => calcjob::submit(t, &scheduler, uuid).map(|id| {
                        cj.job_id = Some(id);
                        None
                    }),
                },
                Stage::Update => {
                    let job_id = cj.job_id.clone().unwrap_or_default();
                    match self.cache.lookup(&computer.name, &job_id, computer.status_window, now) {
                        Lookup::Hit(s) if s.is_final() => Ok(None),
                        Lookup::Hit(_) => Ok(Some(self.cache.expires_at(&computer.name, computer.status_window).unwrap_or(now))),
                        Lookup::Stale => match self.pool.acquire(&computer, &dir, now) {
                            Err(f) => Err(f),
                            Ok(Acquire::WaitUntil(t)) => Ok(Some(t)),
                            Ok(Acquire::Ready(t)) => match scheduler.status(t) {
                                Err(f) => Err(f),
                                Ok(listing) => {
                                    let s = listing.get(&job_id).copied();
                                    self.cache.store(&computer.name, listing, now);
                                    match s {
                                        Some(s) if s.is_final() => Ok(None),
                                        _ => Ok(Some(now + computer.status_window)),
                                    }
                                }
                            },
                        },
                    }
                }
                Stage::Retrieve => match self.pool.acquire(&computer, &dir, now) {
                    Err(f) => Err(f),
                    Ok(Acquire::WaitUntil(t)) => Ok(Some(t)),
                    Ok(Acquire::Ready(t)) => {
                        let list: Vec<String> = node
                            .attribute("retrieve_list")
                            .and_then(|v| serde_json::from_value(v.clone()).ok())
                            .unwrap_or_default();
                        match calcjob::retrieve(t, uuid, &list) {
                            Err(f) => Err(f),
                            Ok(files) => {
                                let r = self.store.write(|tx| {
                                    self.fence(tx, uuid)?;
                                    calcjob::attach_retrieved(tx, uuid, &files)?;
                                    state::transition(tx, uuid, ProcessState::Running, Change::default())?;
                                    cj.stage = Stage::Parse;
                                    cj.failures = 0;
                                    self.save_job(tx, uuid, def, ProcessState::Running, &cj)
                                });
                                r?;
                                if self.config.mode == Mode::Polling {
                                    return Ok(Next::Keep(now + self.config.poll_interval));
                                }
                                continue;
                            }
                        }
                    }
                },
                Stage::Parse => {
                    return self.store.write(|tx| {
                        self.fence(tx, uuid)?;
                        match control::savepoint(tx, || calcjob::parse_outputs(tx, job, uuid)) {
                            Ok((code, message)) => {
                                if let Some(m) = message {
                                    state::report(tx, uuid, "parser", &m)?;
                                }
                                control::end(tx, uuid, ProcessState::Finished, Change { exit_code: Some(code), ..Default::default() })?;
                            }
                            Err(e @ (Error::CreateViolation(_) | Error::Spec(_) | Error::Link(_))) => {
                                control::end(tx, uuid, ProcessState::Excepted, Change { exception: Some(e.to_string()), ..Default::default() })?;
                            }
                            Err(e) => return Err(e),
                        }
                        Ok(Next::Drop)
                    });
                }
            };
            match step {
                Ok(Some(at)) => return self.defer(uuid, at),
                Ok(None) => {
                    self.store.write(|tx| {
                        self.fence(tx, uuid)?;
                        let st = state::status(tx, uuid)?;
                        if st.state.is_terminal() || st.state == ProcessState::Paused {
                            return Err(Error::LeaseLost(uuid));
                        }
                        cj.failures = 0;
                        let to = match stage {
                            Stage::Upload => {
                                cj.stage = Stage::Submit;
                                st.state
                            }
                            Stage::Submit => {
                                let job_id = cj.job_id.clone().unwrap_or_default();
                                calcjob::attach_remote(tx, uuid, &computer.name, &job_id)?;
                                state::report(tx, uuid, "scheduler", &format!("submitted as job {job_id}"))?;
                                state::transition(tx, uuid, ProcessState::Waiting, Change::default())?;
                                cj.stage = Stage::Update;
                                ProcessState::Waiting
                            }
                            Stage::Update => {
                                cj.stage = Stage::Retrieve;
                                st.state
                            }
                            Stage::Retrieve | Stage::Parse => unreachable!("handled above"),
                        };
                        self.save_job(tx, uuid, def, to, &cj)
                    })?;
                    if self.config.mode == Mode::Polling {
                        return Ok(Next::Keep(now + self.config.poll_interval));
                    }
                }
                Err(Fault::Transient(msg)) => {
                    let policy = self.config.backoff;
                    let decision = self.store.write(|tx| {
                        self.fence(tx, uuid)?;
                        cj.failures += 1;
                        let decision = policy.after_failure(cj.failures);
                        let note = match decision {
                            Decision::Retry { delay } => format!("retrying in {delay:.1} s"),
                            Decision::Pause => "pausing".to_string(),
                        };
                        state::report(
                            tx,
                            uuid,
                            "retry",
                            &format!("{} failed ({} of {}): {msg}; {note}", stage.as_str(), cj.failures, policy.max_failures),
                        )?;
                        let st = state::status(tx, uuid)?;
                        self.save_job(tx, uuid, def, st.state, &cj)?;
                        if decision == Decision::Pause {
                            control::pause(tx, uuid, MAX_RETRIES)?;
                        }
                        Ok(decision)
                    })?;
                    return match decision {
                        Decision::Pause => Ok(Next::Drop),
                        Decision::Retry { delay } => self.defer(uuid, now + delay),
                    };
                }
                Err(Fault::Permanent(msg)) => {
                    self.store.write(|tx| {
                        self.fence(tx, uuid)?;
                        let exception = format!("{} failed: {msg}", stage.as_str());
                        control::end(tx, uuid, ProcessState::Excepted, Change { exception: Some(exception), ..Default::default() })
                    })?;
                    return Ok(Next::Drop);
                }
            }
        }
    }

    /// Drives the worker until `stop` returns true: ticks every `tick`
    /// seconds in event mode, at wall-clock multiples of the polling
    /// interval in polling mode.
    pub fn run_until(&mut self, stop: &dyn Fn() -> bool) -> Result<()> {
        while !stop() {
            match self.config.mode {
                Mode::Event => {
                    self.clock = None;
                    let busy = self.tick()?;
                    let now = unix_now();
                    let next_wake = self.held.values().map(|h| h.wake_at).fold(f64::INFINITY, f64::min);
                    if busy == 0 || next_wake > now {
                        let pause = (next_wake - now).clamp(0.001, self.config.tick);
                        thread::sleep(Duration::from_secs_f64(pause));
                    }
                }
                Mode::Polling => {
                    let s = self.config.poll_interval;
                    let boundary = ((unix_now() / s).floor() + 1.0) * s;
                    while unix_now() < boundary {
                        if stop() {
                            return Ok(());
                        }
                        thread::sleep(Duration::from_secs_f64((boundary - unix_now()).clamp(0.001, 0.05)));
                    }
                    self.clock = Some(boundary);
                    let r = self.tick();
                    self.clock = None;
                    r?;
                }
            }
        }
        Ok(())
    }

    /// Runs registered as a daemon worker, with a heartbeat lane, until
    /// `stop` is set; then deregisters. Setting `halt` instead stops
    /// without deregistering, the way a crashed worker disappears.
    pub fn serve(mut self, stop: Arc<AtomicBool>, halt: Arc<AtomicBool>) -> Result<()> {
        self.store.write(|tx| workers::register(tx, &self.id, Some(std::process::id())))?;
        let lane_stop = Arc::new(AtomicBool::new(false));
        let lane = spawn_comm_lane(
            self.store.root().to_path_buf(),
            self.id.clone(),
            self.config.heartbeat,
            lane_stop.clone(),
            halt.clone(),
        );
        let should_stop = || stop.load(Ordering::Relaxed) || halt.load(Ordering::Relaxed);
        while let Err(e) = self.run_until(&should_stop) {
            eprintln!("worker {}: {e}", self.id);
            thread::sleep(Duration::from_millis(100));
        }
        lane_stop.store(true, Ordering::Relaxed);
        let _ = lane.join();
        if !halt.load(Ordering::Relaxed) {
            self.store.write(|tx| workers::deregister(tx, &self.id))?;
        }
        Ok(())
    }
}

/// Heartbeats and reaping on a dedicated connection. It touches only the
/// queue tables, so it never waits on process work.
pub fn spawn_comm_lane(root: PathBuf, id: String, interval: f64, stop: Arc<AtomicBool>, halt: Arc<AtomicBool>) -> JoinHandle<()> {
    thread::spawn(move || {
        let store = match Store::open(&root) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("worker {id}: communication lane cannot open the store: {e}");
                return;
            }
        };
        while !stop.load(Ordering::Relaxed) && !halt.load(Ordering::Relaxed) {
            let beat = store.write(|tx| {
                workers::heartbeat(tx, &id)?;
                workers::reap(tx, interval, unix_now())
            });
            match beat {
                Ok((reaped, n)) if !reaped.is_empty() => {
                    eprintln!("worker {id}: declared {} unreachable, requeued {n} tasks", reaped.join(", "))
                }
                Ok(_) => {}
                Err(e) => eprintln!("worker {id}: heartbeat failed: {e}"),
            }
            let until = unix_now() + interval;
            while unix_now() < until && !stop.load(Ordering::Relaxed) && !halt.load(Ordering::Relaxed) {
                thread::sleep(Duration::from_millis(20));
            }
        }
    })
}

/// A daemon worker running on a thread of this process.
pub struct WorkerHandle {
    pub id: String,
    stop: Arc<AtomicBool>,
    halt: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<()>>>,
}

impl WorkerHandle {
    pub fn spawn(root: impl Into<PathBuf>, registry: Arc<Registry>, id: &str) -> Result<WorkerHandle> {
        let worker = Worker::new(root, registry, id, queue::DAEMON_CHANNEL)?;
        let stop = Arc::new(AtomicBool::new(false));
        let halt = Arc::new(AtomicBool::new(false));
        let (s, h) = (stop.clone(), halt.clone());
        let join = thread::spawn(move || worker.serve(s, h));
        Ok(WorkerHandle { id: id.to_string(), stop, halt, join: Some(join) })
    }

    /// Stops cleanly: held tasks go back to the queue.
    pub fn stop(mut self) -> Result<()> {
        self.stop.store(true, Ordering::Relaxed);
        self.join.take().map(|j| j.join().unwrap_or(Ok(()))).unwrap_or(Ok(()))
    }

    /// Stops without deregistering or heartbeating, as if the worker died.
    pub fn halt(mut self) {
        self.halt.store(true, Ordering::Relaxed);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}
