//! Durable task queue kept in the store.
//!
//! A task is `ready` (claimable once `available_at` passes), `claimed` by
//! one worker under a lease number, `parked` (waiting for children or
//! paused; no owner) or `acked`. Every claim bumps the lease, so a worker
//! that lost its task (declared dead, or the task was re-delivered) fails
//! the lease check on its next transaction. Claims and releases are
//! mirrored in the append-only `assignments` log used for audits.

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::store::{unix_now, Tx};

pub const DAEMON_CHANNEL: &str = "daemon";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Ready,
    Claimed,
    Parked,
    Acked,
}

impl TaskStatus {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "ready" => TaskStatus::Ready,
            "claimed" => TaskStatus::Claimed,
            "parked" => TaskStatus::Parked,
            "acked" => TaskStatus::Acked,
            other => return Err(Error::NotFound(format!("task status `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: i64,
    pub process_uuid: Uuid,
    pub channel: String,
    pub status: TaskStatus,
    pub owner: Option<String>,
    pub lease: i64,
    pub enqueued_at: f64,
    pub available_at: f64,
    pub delivery_count: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub task_id: i64,
    pub process_uuid: Uuid,
    pub lease: i64,
}

pub fn enqueue(tx: &Tx<'_>, process: Uuid, channel: &str) -> Result<i64> {
    let now = unix_now();
    tx.conn()
        .prepare_cached(
            "INSERT INTO tasks(process_uuid, channel, status, enqueued_at, available_at) VALUES (?1, ?2, 'ready', ?3, ?3)",
        )?
        .execute(params![process.to_string(), channel, now])?;
    Ok(tx.conn().last_insert_rowid())
}

pub fn task(tx: &Tx<'_>, process: Uuid) -> Result<Option<Task>> {
    let raw = tx
        .conn()
        .prepare_cached(
            "SELECT id, process_uuid, channel, status, owner, lease, enqueued_at, available_at, delivery_count
             FROM tasks WHERE process_uuid = ?1",
        )?
        .query_row(params![process.to_string()], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, Option<String>>(4)?,
                r.get::<_, i64>(5)?,
                r.get::<_, f64>(6)?,
                r.get::<_, f64>(7)?,
                r.get::<_, i64>(8)?,
            ))
        })
        .optional()?;
    raw.map(|(id, uuid, channel, status, owner, lease, enqueued_at, available_at, delivery_count)| {
        Ok(Task {
            id,
            process_uuid: Uuid::parse_str(&uuid).map_err(|e| Error::NotFound(e.to_string()))?,
            channel,
            status: TaskStatus::parse(&status)?,
            owner,
            lease,
            enqueued_at,
            available_at,
            delivery_count,
        })
    })
    .transpose()
}

pub fn channel_of(tx: &Tx<'_>, process: Uuid) -> Result<String> {
    Ok(task(tx, process)?.map(|t| t.channel).unwrap_or_else(|| DAEMON_CHANNEL.to_string()))
}

/// Claims up to `n` ready tasks of `channel` for `worker`.
pub fn claim(tx: &Tx<'_>, worker: &str, channel: &str, n: usize, now: f64) -> Result<Vec<Claim>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut stmt = tx.conn().prepare_cached(
        "UPDATE tasks SET status = 'claimed', owner = ?1, lease = lease + 1, delivery_count = delivery_count + 1
         WHERE id IN (SELECT id FROM tasks WHERE channel = ?2 AND status = 'ready' AND available_at <= ?3
                      ORDER BY available_at, id LIMIT ?4)
         RETURNING id, process_uuid, lease",
    )?;
    let rows: Vec<(i64, String, i64)> = stmt
        .query_map(params![worker, channel, now, n as i64], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
        .collect::<rusqlite::Result<_>>()?;
    let mut out = Vec::with_capacity(rows.len());
    for (task_id, uuid, lease) in rows {
        tx.conn()
            .prepare_cached("INSERT INTO assignments(task_id, process_uuid, worker, lease, claimed_at) VALUES (?1, ?2, ?3, ?4, ?5)")?
            .execute(params![task_id, uuid, worker, lease, now])?;
        out.push(Claim { task_id, process_uuid: Uuid::parse_str(&uuid).map_err(|e| Error::NotFound(e.to_string()))?, lease });
    }
    out.sort_by_key(|c| c.task_id);
    Ok(out)
}

/// Fails with `LeaseLost` unless `worker` still holds `process` under `lease`.
pub fn check_lease(tx: &Tx<'_>, process: Uuid, worker: &str, lease: i64) -> Result<()> {
    let row: Option<(String, Option<String>, i64)> = tx
        .conn()
        .prepare_cached("SELECT status, owner, lease FROM tasks WHERE process_uuid = ?1")?
        .query_row(params![process.to_string()], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
        .optional()?;
    match row {
        Some((status, Some(owner), l)) if status == "claimed" && owner == worker && l == lease => Ok(()),
        _ => Err(Error::LeaseLost(process)),
    }
}

fn close_assignment(tx: &Tx<'_>, process: Uuid, outcome: &str, now: f64) -> Result<()> {
    tx.conn()
        .prepare_cached(
            "UPDATE assignments SET released_at = ?1, outcome = ?2
             WHERE process_uuid = ?3 AND released_at IS NULL",
        )?
        .execute(params![now, outcome, process.to_string()])?;
    Ok(())
}

/// Final acknowledgement: the task leaves the queue for good.
pub fn ack(tx: &Tx<'_>, process: Uuid) -> Result<()> {
    let now = unix_now();
    tx.conn()
        .prepare_cached("UPDATE tasks SET status = 'acked', owner = NULL, lease = lease + 1 WHERE process_uuid = ?1 AND status != 'acked'")?
        .execute(params![process.to_string()])?;
    close_assignment(tx, process, "acked", now)
}

/// Gives the task back without an owner, claimable at `available_at`.
pub fn release(tx: &Tx<'_>, process: Uuid, available_at: f64, outcome: &str) -> Result<()> {
    let now = unix_now();
    tx.conn()
        .prepare_cached(
            "UPDATE tasks SET status = 'ready', owner = NULL, lease = lease + 1, available_at = ?1
             WHERE process_uuid = ?2 AND status != 'acked'",
        )?
        .execute(params![available_at, process.to_string()])?;
    close_assignment(tx, process, outcome, now)
}

/// Parks the task: nobody owns it until something wakes it.
pub fn park(tx: &Tx<'_>, process: Uuid, outcome: &str) -> Result<()> {
    let now = unix_now();
    tx.conn()
        .prepare_cached("UPDATE tasks SET status = 'parked', owner = NULL, lease = lease + 1 WHERE process_uuid = ?1 AND status != 'acked'")?
        .execute(params![process.to_string()])?;
    close_assignment(tx, process, outcome, now)
}

/// Makes a parked task claimable now.
pub fn unpark(tx: &Tx<'_>, process: Uuid) -> Result<bool> {
    let n = tx
        .conn()
        .prepare_cached("UPDATE tasks SET status = 'ready', available_at = ?1 WHERE process_uuid = ?2 AND status = 'parked'")?
        .execute(params![unix_now(), process.to_string()])?;
    Ok(n > 0)
}

/// Wakes `parent` when it is waiting, parked, and has no live children.
pub(crate) fn wake_if_children_done(tx: &Tx<'_>, parent: Uuid, now: f64) -> Result<()> {
    tx.conn()
        .prepare_cached(
            "UPDATE tasks SET status = 'ready', available_at = ?1
             WHERE process_uuid = ?2 AND status = 'parked'
               AND (SELECT state FROM processes WHERE uuid = ?2) = 'waiting'
               AND NOT EXISTS (SELECT 1 FROM processes WHERE caller = ?2
                               AND state NOT IN ('finished', 'excepted', 'killed'))",
        )?
        .execute(params![now, parent.to_string()])?;
    Ok(())
}

/// Tasks not yet acknowledged, by status.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueDepth {
    pub ready: i64,
    pub claimed: i64,
    pub parked: i64,
}

pub fn depth(tx: &Tx<'_>) -> Result<QueueDepth> {
    let mut d = QueueDepth::default();
    let mut stmt = tx.conn().prepare_cached("SELECT status, COUNT(*) FROM tasks WHERE status != 'acked' GROUP BY status")?;
    for row in stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)))? {
        let (s, n) = row?;
        match s.as_str() {
            "ready" => d.ready = n,
            "claimed" => d.claimed = n,
            "parked" => d.parked = n,
            _ => {}
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: i64,
    pub process_uuid: Uuid,
    pub worker: String,
    pub lease: i64,
    pub claimed_at: f64,
    pub released_at: Option<f64>,
    pub outcome: Option<String>,
}

pub fn assignments(tx: &Tx<'_>) -> Result<Vec<Assignment>> {
    let mut stmt = tx.conn().prepare(
        "SELECT task_id, process_uuid, worker, lease, claimed_at, released_at, outcome FROM assignments ORDER BY id",
    )?;
    let rows: Vec<(i64, String, String, i64, f64, Option<f64>, Option<String>)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?)))?
        .collect::<rusqlite::Result<_>>()?;
    rows.into_iter()
        .map(|(task_id, uuid, worker, lease, claimed_at, released_at, outcome)| {
            Ok(Assignment {
                task_id,
                process_uuid: Uuid::parse_str(&uuid).map_err(|e| Error::NotFound(e.to_string()))?,
                worker,
                lease,
                claimed_at,
                released_at,
                outcome,
            })
        })
        .collect()
}

/// Pairs of assignments of one task whose holding intervals overlap.
/// Leases are strictly increasing per task, so two open intervals can
/// only coexist if the queue handed one task to two workers at once.
pub fn overlapping_assignments(log: &[Assignment]) -> Vec<(Assignment, Assignment)> {
    let mut out = Vec::new();
    for (i, a) in log.iter().enumerate() {
        for b in &log[i + 1..] {
            if a.task_id != b.task_id || a.lease == b.lease {
                continue;
            }
            let a_end = a.released_at.unwrap_or(f64::INFINITY);
            let b_end = b.released_at.unwrap_or(f64::INFINITY);
            if a.claimed_at < b_end && b.claimed_at < a_end {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}
