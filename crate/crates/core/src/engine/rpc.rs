//! Remote control of processes.
//!
//! A process whose task is unclaimed is controlled directly in a store
//! transaction. A claimed process belongs to a worker, which applies queued
//! requests at the start of its next tick; the caller waits for the answer
//! and gives up with [`Error::Unreachable`] after the timeout.

use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rusqlite::{params, OptionalExtension};
use serde_json::json;
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::store::{Store, Tx};

use super::control::{self, Action};
use super::queue::{self, TaskStatus};
use super::state::{self, ProcessStatus};

/// Pending requests for tasks `owner` holds, oldest first.
pub(crate) fn pending_for(tx: &Tx<'_>, owner: &str) -> Result<Vec<(i64, Uuid, Action)>> {
    let mut stmt = tx.conn().prepare_cached(
        "SELECT r.id, r.process_uuid, r.action FROM rpc r JOIN tasks t ON t.process_uuid = r.process_uuid
         WHERE r.status = 'pending' AND t.owner = ?1 AND t.status = 'claimed' ORDER BY r.id",
    )?;
    let rows: Vec<(i64, String, String)> =
        stmt.query_map(params![owner], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?.collect::<rusqlite::Result<_>>()?;
    rows.into_iter()
        .map(|(id, u, a)| Ok((id, Uuid::parse_str(&u).map_err(|e| Error::NotFound(e.to_string()))?, a.parse()?)))
        .collect()
}

/// Applies a request as the owner and records the answer.
pub(crate) fn answer(tx: &Tx<'_>, store_root: &Path, id: i64, uuid: Uuid, action: Action) -> Result<()> {
    let response = match control::savepoint(tx, || control::apply(tx, store_root, uuid, action)) {
        Ok(st) => json!({"ok": st}),
        Err(Error::Terminal(_)) => json!({"error": "terminal"}),
        Err(e) => json!({"error": e.to_string()}),
    };
    tx.conn().execute(
        "UPDATE rpc SET status = 'done', response = ?1 WHERE id = ?2",
        params![response.to_string(), id],
    )?;
    Ok(())
}

enum First {
    Applied(ProcessStatus),
    Queued(i64, String),
}

fn decode(uuid: Uuid, response: &str) -> Result<ProcessStatus> {
    let v: serde_json::Value = serde_json::from_str(response)?;
    if let Some(st) = v.get("ok") {
        return Ok(serde_json::from_value(st.clone())?);
    }
    match v.get("error").and_then(|e| e.as_str()) {
        Some("terminal") => Err(Error::Terminal(uuid)),
        Some(msg) => Err(Error::Config(msg.to_string())),
        None => Err(Error::Config(format!("malformed response `{response}`"))),
    }
}

/// Applies `action` to `uuid`, directly or through its owner.
pub fn call(store: &Store, uuid: Uuid, action: Action, timeout: Duration) -> Result<ProcessStatus> {
    let root = store.root().to_path_buf();
    let direct_or_queue = |tx: &Tx<'_>| -> Result<First> {
        let st = state::status(tx, uuid)?;
        if st.state.is_terminal() {
            return Err(Error::Terminal(uuid));
        }
        match queue::task(tx, uuid)? {
            Some(t) if t.status == TaskStatus::Claimed => {
                Ok(First::Queued(control::request(tx, uuid, action)?, t.owner.unwrap_or_default()))
            }
            _ => Ok(First::Applied(control::apply(tx, &root, uuid, action)?)),
        }
    };
    let deadline = Instant::now() + timeout;
    let (mut id, mut owner) = match store.write(direct_or_queue)? {
        First::Applied(st) => return Ok(st),
        First::Queued(id, owner) => (id, owner),
    };
    loop {
        thread::sleep(Duration::from_millis(10));
        let (status, response, still_owned): (String, Option<String>, bool) = store.read(|tx| {
            let (s, r) = tx
                .conn()
                .prepare_cached("SELECT status, response FROM rpc WHERE id = ?1")?
                .query_row(params![id], |r| Ok((r.get(0)?, r.get(1)?)))?;
            let owned = matches!(queue::task(tx, uuid)?, Some(t) if t.status == TaskStatus::Claimed && t.owner.as_deref() == Some(owner.as_str()));
            Ok((s, r, owned))
        })?;
        if status == "done" {
            return decode(uuid, response.as_deref().unwrap_or("{}"));
        }
        let expired = Instant::now() >= deadline;
        if still_owned && !expired {
            continue;
        }
        // Withdraw the request unless the owner picked it up meanwhile.
        let next = store.write(|tx| {
            let n = tx.conn().execute("UPDATE rpc SET status = 'cancelled' WHERE id = ?1 AND status = 'pending'", params![id])?;
            if n == 0 {
                return Ok(None);
            }
            if expired {
                return Err(Error::Unreachable(uuid));
            }
            direct_or_queue(tx).map(Some)
        })?;
        match next {
            None => continue,
            Some(First::Applied(st)) => return Ok(st),
            Some(First::Queued(i, o)) => {
                id = i;
                owner = o;
            }
        }
    }
}

/// Latest response to requests on `uuid`, for diagnostics.
pub fn last_response(tx: &Tx<'_>, uuid: Uuid) -> Result<Option<(String, String, Option<String>)>> {
    Ok(tx
        .conn()
        .prepare_cached("SELECT action, status, response FROM rpc WHERE process_uuid = ?1 ORDER BY id DESC LIMIT 1")?
        .query_row(params![uuid.to_string()], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
        .optional()?)
}
