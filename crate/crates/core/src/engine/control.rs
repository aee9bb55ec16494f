//! Pause, play and kill, applied inside a store transaction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rusqlite::params;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::process::calcjob::CalcJobState;
use crate::process::scheduler::{SchedulerAdapter, SimScheduler};
use crate::process::transport::{Computer, LocalTransport, DEFAULT_COMPUTER};
use crate::store::{unix_now, Tx};

use super::checkpoint::{self, CheckpointBody};
use super::queue::{self, TaskStatus};
use super::state::{self, Change, ProcessState, ProcessStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Pause,
    Play,
    Kill,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Pause => "pause",
            Action::Play => "play",
            Action::Kill => "kill",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pause" => Ok(Action::Pause),
            "play" => Ok(Action::Play),
            "kill" => Ok(Action::Kill),
            other => Err(Error::Config(format!("unknown action `{other}` (expected pause, play or kill)"))),
        }
    }
}

/// Runs `f` inside a savepoint, rolling its effects back on error.
pub(crate) fn savepoint<T>(tx: &Tx<'_>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    tx.conn().execute_batch("SAVEPOINT action")?;
    let result = f();
    let end = if result.is_ok() { "RELEASE action" } else { "ROLLBACK TO action; RELEASE action" };
    tx.conn().execute_batch(end)?;
    result
}

/// Moves a live process to a terminal state through legal transitions and
/// acknowledges its task.
pub(crate) fn end(tx: &Tx<'_>, uuid: Uuid, to: ProcessState, change: Change) -> Result<ProcessStatus> {
    let st = state::status(tx, uuid)?;
    match st.state {
        ProcessState::Created => {
            state::transition(tx, uuid, ProcessState::Running, Change::default())?;
        }
        ProcessState::Paused => {
            state::transition(tx, uuid, st.paused_from.unwrap_or(ProcessState::Running), Change::default())?;
        }
        _ => {}
    }
    let out = state::transition(tx, uuid, to, change)?;
    queue::ack(tx, uuid)?;
    Ok(out)
}

/// Rewrites the state recorded in the checkpoint, if there is one.
fn touch_checkpoint(tx: &Tx<'_>, uuid: Uuid, to: ProcessState, reset_failures: bool) -> Result<()> {
    if let Some(mut cp) = checkpoint::load(tx, uuid)? {
        cp.state = to;
        if let (true, CheckpointBody::CalcJob(job)) = (reset_failures, &mut cp.body) {
            job.failures = 0;
        }
        checkpoint::save(tx, uuid, &cp)?;
    }
    Ok(())
}

/// Applies `action` to a live process. `store_root` locates computers for
/// killing scheduler jobs.
pub(crate) fn apply(tx: &Tx<'_>, store_root: &Path, uuid: Uuid, action: Action) -> Result<ProcessStatus> {
    let st = state::status(tx, uuid)?;
    if st.state.is_terminal() {
        return Err(Error::Terminal(uuid));
    }
    match action {
        Action::Pause => pause(tx, uuid, "paused by request"),
        Action::Play => play(tx, uuid),
        Action::Kill => kill(tx, store_root, uuid),
    }
}

pub(crate) fn pause(tx: &Tx<'_>, uuid: Uuid, reason: &str) -> Result<ProcessStatus> {
    let st = state::status(tx, uuid)?;
    let st = match st.state {
        ProcessState::Paused => st,
        ProcessState::Created => {
            state::transition(tx, uuid, ProcessState::Running, Change::default())?;
            state::transition(tx, uuid, ProcessState::Paused, Change { pause_reason: Some(reason.into()), ..Default::default() })?
        }
        _ => state::transition(tx, uuid, ProcessState::Paused, Change { pause_reason: Some(reason.into()), ..Default::default() })?,
    };
    queue::park(tx, uuid, "paused")?;
    touch_checkpoint(tx, uuid, ProcessState::Paused, false)?;
    Ok(st)
}

fn play(tx: &Tx<'_>, uuid: Uuid) -> Result<ProcessStatus> {
    let st = state::status(tx, uuid)?;
    if st.state != ProcessState::Paused {
        return Ok(st);
    }
    let to = st.paused_from.unwrap_or(ProcessState::Running);
    let out = state::transition(tx, uuid, to, Change::default())?;
    touch_checkpoint(tx, uuid, to, true)?;
    queue::unpark(tx, uuid)?;
    Ok(out)
}

/// Asks the owner of `uuid` to apply `action` (fire and forget).
pub(crate) fn request(tx: &Tx<'_>, uuid: Uuid, action: Action) -> Result<i64> {
    tx.conn().execute(
        "INSERT INTO rpc(process_uuid, action, requested_at, status) VALUES (?1, ?2, ?3, 'pending')",
        params![uuid.to_string(), action.as_str(), unix_now()],
    )?;
    Ok(tx.conn().last_insert_rowid())
}

fn kill(tx: &Tx<'_>, store_root: &Path, uuid: Uuid) -> Result<ProcessStatus> {
    for child in state::live_children(tx, uuid)? {
        match queue::task(tx, child)? {
            Some(t) if t.status == TaskStatus::Claimed => {
                request(tx, child, Action::Kill)?;
            }
            _ => {
                kill(tx, store_root, child)?;
            }
        }
    }
    kill_scheduler_job(tx, store_root, uuid)?;
    end(tx, uuid, ProcessState::Killed, Change::default())
}

/// Best effort: a job that cannot be reached is reported, not retried.
fn kill_scheduler_job(tx: &Tx<'_>, store_root: &Path, uuid: Uuid) -> Result<()> {
    let Some(cp) = checkpoint::load(tx, uuid)? else { return Ok(()) };
    let CheckpointBody::CalcJob(CalcJobState { job_id: Some(job_id), .. }) = cp.body else { return Ok(()) };
    let node = tx.get_node(uuid)?;
    let computer = Computer::load(tx, node.computer().unwrap_or(DEFAULT_COMPUTER))?;
    let dir = computer.dir(store_root);
    let result = LocalTransport::open(&dir)
        .and_then(|t| SimScheduler::new(&dir, computer.scheduler.clone()).kill(&t, &job_id));
    match result {
        Ok(()) => state::report(tx, uuid, "kill", &format!("scheduler job {job_id} killed")),
        Err(f) => state::report(tx, uuid, "kill", &format!("could not kill scheduler job {job_id}: {f}")),
    }
}
