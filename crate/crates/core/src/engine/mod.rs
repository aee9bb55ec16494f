//! The process engine: durable queue, workers, checkpoints, control.
//!
//! [`Engine`] is the client-side entry point. Processes are either
//! submitted to the daemon (any registered worker may pick them up) or run
//! by a local runner bound to the calling thread, which drives the process
//! tree on a private channel until the root is terminal.

pub mod backoff;
pub mod checkpoint;
pub mod config;
pub mod control;
pub mod events;
pub mod queue;
pub mod rpc;
pub mod state;
pub mod worker;
pub mod workers;

use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::Result;
use crate::process::functions::run_function;
use crate::process::{create_process, Body, Env, Inputs, Outcome, Registry};
use crate::store::Store;

pub use backoff::{BackoffPolicy, Fault};
pub use checkpoint::{Checkpoint, CheckpointBody};
pub use config::{EngineConfig, Mode};
pub use control::Action;
pub use events::{EventFilter, StateEvent, Subscription};
pub use queue::{QueueDepth, DAEMON_CHANNEL};
pub use state::{ProcessState, ProcessStatus, ReportEntry};
pub use worker::{Worker, WorkerHandle};
pub use workers::WorkerInfo;

/// Snapshot of the daemon as seen through the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaemonStatus {
    pub workers: Vec<WorkerInfo>,
    pub alive: usize,
    pub queue: QueueDepth,
}

pub struct Engine {
    store: Store,
    env: Env,
    config: EngineConfig,
}

impl Engine {
    pub fn open(root: impl AsRef<Path>, registry: Arc<Registry>) -> Result<Engine> {
        Engine::with_store(Store::open(root)?, registry)
    }

    pub fn with_store(store: Store, registry: Arc<Registry>) -> Result<Engine> {
        let config = store.read(EngineConfig::load)?;
        let mut env = Env::new(registry);
        env.caching = config.caching.clone();
        Ok(Engine { store, env, config })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.env.registry
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Persists `config`; workers started afterwards use it.
    pub fn configure(&mut self, config: EngineConfig) -> Result<()> {
        self.store.write(|tx| config.save(tx))?;
        self.env.caching = config.caching.clone();
        self.config = config;
        Ok(())
    }

    /// Creates the process and hands it to the daemon.
    pub fn submit(&self, id: &str, mut inputs: Inputs) -> Result<Uuid> {
        let def = self.env.registry.get(id)?;
        self.store.write(|tx| {
            let node = create_process(tx, &def, &mut inputs, None, "call")?;
            queue::enqueue(tx, node.uuid(), DAEMON_CHANNEL)?;
            Ok(node.uuid())
        })
    }

    /// Runs a process to a terminal state on the calling thread.
    pub fn run(&self, id: &str, mut inputs: Inputs) -> Result<Outcome> {
        let def = self.env.registry.get(id)?;
        if matches!(def.body, Body::CalcFunction(_) | Body::WorkFunction(_)) {
            return run_function(&self.store, &self.env, id, inputs);
        }
        let uuid = self.store.write(|tx| {
            let node = create_process(tx, &def, &mut inputs, None, "call")?;
            queue::enqueue(tx, node.uuid(), &format!("local:{}", node.uuid()))?;
            Ok(node.uuid())
        })?;
        self.drive_local(uuid)
    }

    /// Drives a process created on a `local:` channel until it is terminal.
    pub fn drive_local(&self, uuid: Uuid) -> Result<Outcome> {
        let channel = self.store.read(|tx| queue::channel_of(tx, uuid))?;
        let mut worker = Worker::new(self.store.root(), self.env.registry.clone(), &format!("local-{}", uuid.simple()), &channel)?;
        let done = || self.store.read(|tx| Ok(state::status(tx, uuid)?.state.is_terminal())).unwrap_or(false);
        worker.run_until(&done)?;
        self.outcome(uuid)
    }

    pub fn status(&self, uuid: Uuid) -> Result<ProcessStatus> {
        self.store.read(|tx| state::status(tx, uuid))
    }

    pub fn outcome(&self, uuid: Uuid) -> Result<Outcome> {
        self.store.read(|tx| Outcome::load(tx, uuid))
    }

    pub fn list(&self, state: Option<ProcessState>) -> Result<Vec<ProcessStatus>> {
        self.store.read(|tx| state::list(tx, state))
    }

    pub fn report(&self, uuid: Uuid) -> Result<Vec<ReportEntry>> {
        self.store.read(|tx| state::report_entries(tx, uuid))
    }

    pub fn checkpoint(&self, uuid: Uuid) -> Result<Option<Checkpoint>> {
        self.store.read(|tx| checkpoint::load(tx, uuid))
    }

    /// Applies a control action, through the owning worker if the process
    /// is held by one.
    pub fn rpc(&self, uuid: Uuid, action: Action) -> Result<ProcessStatus> {
        rpc::call(&self.store, uuid, action, Duration::from_secs_f64(self.config.rpc_timeout))
    }

    pub fn pause(&self, uuid: Uuid) -> Result<ProcessStatus> {
        self.rpc(uuid, Action::Pause)
    }

    pub fn play(&self, uuid: Uuid) -> Result<ProcessStatus> {
        self.rpc(uuid, Action::Play)
    }

    pub fn kill(&self, uuid: Uuid) -> Result<ProcessStatus> {
        self.rpc(uuid, Action::Kill)
    }

    /// Subscribes to state changes recorded from now on.
    pub fn subscribe(&self, filter: EventFilter) -> Result<Subscription> {
        Subscription::open(self.store.root(), filter)
    }

    /// Waits until `uuid` is terminal or `timeout` passes; returns the last
    /// status seen.
    pub fn wait(&self, uuid: Uuid, timeout: Duration) -> Result<ProcessStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            let st = self.status(uuid)?;
            if st.state.is_terminal() || Instant::now() >= deadline {
                return Ok(st);
            }
            thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn daemon_status(&self) -> Result<DaemonStatus> {
        self.store.read(|tx| {
            let workers = workers::list(tx)?;
            let alive = workers.iter().filter(|w| w.status == "alive").count();
            Ok(DaemonStatus { workers, alive, queue: queue::depth(tx)? })
        })
    }

    /// Starts a daemon worker on a thread of this process.
    pub fn spawn_worker(&self, id: &str) -> Result<WorkerHandle> {
        WorkerHandle::spawn(self.store.root(), self.env.registry.clone(), id)
    }
}

/// One executed work-chain step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub process_uuid: Uuid,
    pub step: String,
    pub pc: String,
    pub ordinal: i64,
    pub worker: String,
    pub at: f64,
}

/// The step-execution log, in execution order.
pub fn step_log(tx: &crate::store::Tx<'_>) -> Result<Vec<StepRecord>> {
    let mut stmt = tx.conn().prepare("SELECT process_uuid, step, pc, ordinal, worker, at FROM step_log ORDER BY id")?;
    let rows: Vec<(String, String, String, i64, String, f64)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?)))?
        .collect::<rusqlite::Result<_>>()?;
    rows.into_iter()
        .map(|(u, step, pc, ordinal, worker, at)| {
            Ok(StepRecord {
                process_uuid: Uuid::parse_str(&u).map_err(|e| crate::Error::NotFound(e.to_string()))?,
                step,
                pc,
                ordinal,
                worker,
                at,
            })
        })
        .collect()
}
