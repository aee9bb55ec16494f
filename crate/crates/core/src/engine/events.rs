//! State-change broadcasts. Every transition is appended to the `events`
//! table; subscribers read it from their last sequence number.

use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rusqlite::params;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::store::{Store, Tx};

use super::state::ProcessState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEvent {
    pub seq: i64,
    pub process_uuid: Uuid,
    pub process_type: String,
    pub old_state: Option<ProcessState>,
    pub new_state: ProcessState,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventFilter {
    All,
    Process(Uuid),
    ProcessType(String),
}

impl EventFilter {
    fn matches(&self, e: &StateEvent) -> bool {
        match self {
            EventFilter::All => true,
            EventFilter::Process(u) => e.process_uuid == *u,
            EventFilter::ProcessType(t) => &e.process_type == t,
        }
    }
}

pub fn latest_seq(tx: &Tx<'_>) -> Result<i64> {
    Ok(tx.conn().query_row("SELECT COALESCE(MAX(seq), 0) FROM events", [], |r| r.get(0))?)
}

/// Events after `seq`, at most `limit`, ascending.
pub fn since(tx: &Tx<'_>, seq: i64, limit: usize) -> Result<Vec<StateEvent>> {
    let mut stmt = tx.conn().prepare_cached(
        "SELECT seq, process_uuid, process_type, old_state, new_state, at FROM events WHERE seq > ?1 ORDER BY seq LIMIT ?2",
    )?;
    let rows: Vec<(i64, String, String, Option<String>, String, f64)> = stmt
        .query_map(params![seq, limit as i64], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?)))?
        .collect::<rusqlite::Result<_>>()?;
    rows.into_iter()
        .map(|(seq, u, process_type, old, new, at)| {
            Ok(StateEvent {
                seq,
                process_uuid: Uuid::parse_str(&u).map_err(|e| Error::NotFound(e.to_string()))?,
                process_type,
                old_state: old.map(|s| s.parse()).transpose()?,
                new_state: new.parse()?,
                at,
            })
        })
        .collect()
}

/// Every state change of one process, ascending.
pub fn history(tx: &Tx<'_>, uuid: Uuid) -> Result<Vec<StateEvent>> {
    let mut stmt = tx.conn().prepare_cached(
        "SELECT seq, process_type, old_state, new_state, at FROM events WHERE process_uuid = ?1 ORDER BY seq",
    )?;
    let rows: Vec<(i64, String, Option<String>, String, f64)> = stmt
        .query_map(params![uuid.to_string()], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)))?
        .collect::<rusqlite::Result<_>>()?;
    rows.into_iter()
        .map(|(seq, process_type, old, new, at)| {
            Ok(StateEvent { seq, process_uuid: uuid, process_type, old_state: old.map(|s| s.parse()).transpose()?, new_state: new.parse()?, at })
        })
        .collect()
}

/// A filtered cursor over the event log with its own connection.
pub struct Subscription {
    store: Store,
    filter: EventFilter,
    last_seq: i64,
}

impl Subscription {
    /// Subscribes to events recorded after this call.
    pub fn open(root: &Path, filter: EventFilter) -> Result<Subscription> {
        let store = Store::open(root)?;
        let last_seq = store.read(latest_seq)?;
        Ok(Subscription { store, filter, last_seq })
    }

    /// Subscribes from the beginning of the log.
    pub fn replay(root: &Path, filter: EventFilter) -> Result<Subscription> {
        Ok(Subscription { store: Store::open(root)?, filter, last_seq: 0 })
    }

    pub fn last_seq(&self) -> i64 {
        self.last_seq
    }

    /// Matching events recorded since the previous poll.
    pub fn poll(&mut self) -> Result<Vec<StateEvent>> {
        let mut out = Vec::new();
        loop {
            let batch = self.store.read(|tx| since(tx, self.last_seq, 1000))?;
            let Some(last) = batch.last() else { break };
            self.last_seq = last.seq;
            let full = batch.len() == 1000;
            out.extend(batch.into_iter().filter(|e| self.filter.matches(e)));
            if !full {
                break;
            }
        }
        Ok(out)
    }

    /// Polls until at least one event matches or `timeout` passes.
    pub fn wait(&mut self, timeout: Duration) -> Result<Vec<StateEvent>> {
        let deadline = Instant::now() + timeout;
        loop {
            let events = self.poll()?;
            if !events.is_empty() || Instant::now() >= deadline {
                return Ok(events);
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
}
