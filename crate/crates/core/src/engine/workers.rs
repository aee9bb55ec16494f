//! Worker registry, heartbeats and the liveness monitor.

use rusqlite::params;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::store::{unix_now, Tx};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerInfo {
    pub id: String,
    pub pid: Option<i64>,
    pub started_at: f64,
    pub last_heartbeat: f64,
    pub status: String,
    pub heartbeat_age: f64,
    pub claimed: i64,
}

pub fn register(tx: &Tx<'_>, id: &str, pid: Option<u32>) -> Result<()> {
    let now = unix_now();
    tx.conn().execute(
        "INSERT INTO workers(id, pid, started_at, last_heartbeat, status) VALUES (?1, ?2, ?3, ?3, 'alive')
         ON CONFLICT(id) DO UPDATE SET pid = excluded.pid, last_heartbeat = excluded.last_heartbeat, status = 'alive'",
        params![id, pid.map(i64::from), now],
    )?;
    Ok(())
}

/// Records a heartbeat. A worker previously declared unreachable comes
/// back as alive; the tasks it lost stay lost (their leases moved on).
pub fn heartbeat(tx: &Tx<'_>, id: &str) -> Result<()> {
    tx.conn()
        .prepare_cached("UPDATE workers SET last_heartbeat = ?1, status = 'alive' WHERE id = ?2 AND status != 'stopped'")?
        .execute(params![unix_now(), id])?;
    Ok(())
}

/// Marks a worker as cleanly stopped and returns its tasks to the queue.
pub fn deregister(tx: &Tx<'_>, id: &str) -> Result<()> {
    tx.conn().execute("UPDATE workers SET status = 'stopped' WHERE id = ?1", params![id])?;
    release_tasks_of(tx, id, "worker-stopped")?;
    Ok(())
}

fn release_tasks_of(tx: &Tx<'_>, worker: &str, outcome: &str) -> Result<usize> {
    let now = unix_now();
    tx.conn().execute(
        "UPDATE assignments SET released_at = ?1, outcome = ?2
         WHERE worker = ?3 AND released_at IS NULL",
        params![now, outcome, worker],
    )?;
    let n = tx.conn().execute(
        "UPDATE tasks SET status = 'ready', owner = NULL, lease = lease + 1, available_at = ?1
         WHERE owner = ?2 AND status = 'claimed'",
        params![now, worker],
    )?;
    Ok(n)
}

/// Declares every alive worker whose last heartbeat is older than two
/// intervals unreachable and redelivers its tasks. Returns the workers
/// declared and the number of tasks requeued.
pub fn reap(tx: &Tx<'_>, interval: f64, now: f64) -> Result<(Vec<String>, usize)> {
    let mut stmt = tx
        .conn()
        .prepare_cached("SELECT id FROM workers WHERE status = 'alive' AND last_heartbeat < ?1 ORDER BY id")?;
    let stale: Vec<String> = stmt.query_map(params![now - 2.0 * interval], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
    let mut requeued = 0;
    for id in &stale {
        tx.conn().execute("UPDATE workers SET status = 'unreachable' WHERE id = ?1", params![id])?;
        requeued += release_tasks_of(tx, id, "requeued")?;
    }
    Ok((stale, requeued))
}

pub fn list(tx: &Tx<'_>) -> Result<Vec<WorkerInfo>> {
    let now = unix_now();
    let mut stmt = tx.conn().prepare_cached(
        "SELECT w.id, w.pid, w.started_at, w.last_heartbeat, w.status,
                (SELECT COUNT(*) FROM tasks t WHERE t.owner = w.id AND t.status = 'claimed')
         FROM workers w ORDER BY w.started_at, w.id",
    )?;
    let rows = stmt.query_map([], |r| {
        let last: f64 = r.get(3)?;
        Ok(WorkerInfo {
            id: r.get(0)?,
            pid: r.get(1)?,
            started_at: r.get(2)?,
            last_heartbeat: last,
            status: r.get(4)?,
            heartbeat_age: (now - last).max(0.0),
            claimed: r.get(5)?,
        })
    })?;
    Ok(rows.collect::<rusqlite::Result<_>>()?)
}

pub fn is_alive(tx: &Tx<'_>, id: &str) -> Result<bool> {
    let n: i64 = tx
        .conn()
        .prepare_cached("SELECT COUNT(*) FROM workers WHERE id = ?1 AND status = 'alive'")?
        .query_row(params![id], |r| r.get(0))?;
    Ok(n > 0)
}
