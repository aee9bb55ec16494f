//! Process state machine and its persistent record.

use std::fmt;
use std::str::FromStr;

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::store::{unix_now, Tx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessState {
    Created,
    Running,
    Waiting,
    Paused,
    Finished,
    Excepted,
    Killed,
}

impl ProcessState {
    pub const ALL: [ProcessState; 7] = [
        ProcessState::Created,
        ProcessState::Running,
        ProcessState::Waiting,
        ProcessState::Paused,
        ProcessState::Finished,
        ProcessState::Excepted,
        ProcessState::Killed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessState::Created => "created",
            ProcessState::Running => "running",
            ProcessState::Waiting => "waiting",
            ProcessState::Paused => "paused",
            ProcessState::Finished => "finished",
            ProcessState::Excepted => "excepted",
            ProcessState::Killed => "killed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ProcessState::Finished | ProcessState::Excepted | ProcessState::Killed)
    }

    /// The legal transition relation.
    pub fn can_become(self, to: ProcessState) -> bool {
        use ProcessState::*;
        matches!(
            (self, to),
            (Created, Running)
                | (Running, Waiting)
                | (Waiting, Running)
                | (Running | Waiting, Paused)
                | (Paused, Running | Waiting)
                | (Running | Waiting, Finished | Excepted | Killed)
        )
    }
}

impl fmt::Display for ProcessState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProcessState::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::NotFound(format!("process state `{s}`")))
    }
}

/// The mutable execution record of a process node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessStatus {
    pub uuid: Uuid,
    pub node_id: i64,
    pub process_type: String,
    pub state: ProcessState,
    pub exit_code: Option<i64>,
    pub exception: Option<String>,
    pub paused_from: Option<ProcessState>,
    pub pause_reason: Option<String>,
    pub caller: Option<Uuid>,
    pub updated_at: f64,
}

/// Extra fields written together with a transition.
#[derive(Debug, Clone, Default)]
pub struct Change {
    pub exit_code: Option<i64>,
    pub exception: Option<String>,
    pub pause_reason: Option<String>,
}

pub(crate) fn insert(tx: &Tx<'_>, node_id: i64, uuid: Uuid, process_type: &str, caller: Option<Uuid>) -> Result<()> {
    let now = unix_now();
    tx.conn().execute(
        "INSERT INTO processes(node_id, uuid, process_type, state, caller, updated_at) VALUES (?1, ?2, ?3, 'created', ?4, ?5)",
        params![node_id, uuid.to_string(), process_type, caller.map(|c| c.to_string()), now],
    )?;
    record_event(tx, uuid, process_type, None, ProcessState::Created, now)?;
    Ok(())
}

fn record_event(tx: &Tx<'_>, uuid: Uuid, process_type: &str, old: Option<ProcessState>, new: ProcessState, at: f64) -> Result<()> {
    tx.conn()
        .prepare_cached("INSERT INTO events(process_uuid, process_type, kind, old_state, new_state, at) VALUES (?1, ?2, 'state', ?3, ?4, ?5)")?
        .execute(params![uuid.to_string(), process_type, old.map(|s| s.as_str()), new.as_str(), at])?;
    Ok(())
}

fn parse_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(i64, String, String, String, Option<i64>, Option<String>, Option<String>, Option<String>, Option<String>, f64)> {
    Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?, r.get(7)?, r.get(8)?, r.get(9)?))
}

const COLUMNS: &str = "node_id, uuid, process_type, state, exit_code, exception, paused_from, pause_reason, caller, updated_at";

type RawRow = (i64, String, String, String, Option<i64>, Option<String>, Option<String>, Option<String>, Option<String>, f64);

fn build(raw: RawRow) -> Result<ProcessStatus> {
    let (node_id, uuid, process_type, state, exit_code, exception, paused_from, pause_reason, caller, updated_at) = raw;
    let parse_uuid = |s: &str| Uuid::parse_str(s).map_err(|e| Error::NotFound(format!("uuid {s}: {e}")));
    Ok(ProcessStatus {
        uuid: parse_uuid(&uuid)?,
        node_id,
        process_type,
        state: state.parse()?,
        exit_code,
        exception,
        paused_from: paused_from.map(|s| s.parse()).transpose()?,
        pause_reason,
        caller: caller.map(|c| parse_uuid(&c)).transpose()?,
        updated_at,
    })
}

pub fn try_status(tx: &Tx<'_>, uuid: Uuid) -> Result<Option<ProcessStatus>> {
    tx.conn()
        .prepare_cached(&format!("SELECT {COLUMNS} FROM processes WHERE uuid = ?1"))?
        .query_row(params![uuid.to_string()], parse_row)
        .optional()?
        .map(build)
        .transpose()
}

pub fn status(tx: &Tx<'_>, uuid: Uuid) -> Result<ProcessStatus> {
    try_status(tx, uuid)?.ok_or_else(|| Error::NotFound(format!("process {uuid}")))
}

/// Processes, ascending node id, optionally restricted to one state.
pub fn list(tx: &Tx<'_>, state: Option<ProcessState>) -> Result<Vec<ProcessStatus>> {
    let mut stmt = tx.conn().prepare_cached(&format!(
        "SELECT {COLUMNS} FROM processes WHERE (?1 IS NULL OR state = ?1) ORDER BY node_id"
    ))?;
    let rows: Vec<RawRow> = stmt.query_map(params![state.map(|s| s.as_str())], parse_row)?.collect::<rusqlite::Result<_>>()?;
    rows.into_iter().map(build).collect()
}

/// Non-terminal children called by `parent`.
pub fn live_children(tx: &Tx<'_>, parent: Uuid) -> Result<Vec<Uuid>> {
    let mut stmt = tx.conn().prepare_cached(
        "SELECT uuid FROM processes WHERE caller = ?1 AND state NOT IN ('finished', 'excepted', 'killed') ORDER BY node_id",
    )?;
    let rows: Vec<String> = stmt.query_map(params![parent.to_string()], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
    rows.iter().map(|s| Uuid::parse_str(s).map_err(|e| Error::NotFound(e.to_string()))).collect()
}

/// Applies a legal transition, records the event and, when a child becomes
/// terminal, wakes a parent that was parked waiting for its children.
pub fn transition(tx: &Tx<'_>, uuid: Uuid, to: ProcessState, change: Change) -> Result<ProcessStatus> {
    let current = status(tx, uuid)?;
    if current.state.is_terminal() {
        return Err(Error::Terminal(uuid));
    }
    if !current.state.can_become(to) {
        return Err(Error::IllegalTransition { from: current.state.to_string(), to: to.to_string() });
    }
    let now = unix_now();
    let paused_from = if to == ProcessState::Paused { Some(current.state.as_str()) } else { None };
    tx.conn()
        .prepare_cached(
            "UPDATE processes SET state = ?1, exit_code = COALESCE(?2, exit_code), exception = COALESCE(?3, exception),
             paused_from = ?4, pause_reason = ?5, updated_at = ?6 WHERE uuid = ?7",
        )?
        .execute(params![
            to.as_str(),
            change.exit_code,
            change.exception,
            paused_from,
            change.pause_reason,
            now,
            uuid.to_string()
        ])?;
    record_event(tx, uuid, &current.process_type, Some(current.state), to, now)?;
    let mut message = format!("{} -> {}", current.state, to);
    if let Some(code) = change.exit_code {
        message.push_str(&format!(" [exit code {code}]"));
    }
    if let Some(reason) = &change.pause_reason {
        message.push_str(&format!(" [{reason}]"));
    }
    if let Some(exc) = &change.exception {
        message.push_str(&format!(" [{exc}]"));
    }
    report(tx, uuid, "state", &message)?;
    if to.is_terminal() {
        if let Some(parent) = current.caller {
            super::queue::wake_if_children_done(tx, parent, now)?;
        }
    }
    status(tx, uuid)
}

pub fn report(tx: &Tx<'_>, uuid: Uuid, category: &str, message: &str) -> Result<()> {
    let id = tx.require_node_id(uuid)?;
    tx.conn()
        .prepare_cached("INSERT INTO process_report(node_id, at, category, message) VALUES (?1, ?2, ?3, ?4)")?
        .execute(params![id, unix_now(), category, message])?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub at: f64,
    pub category: String,
    pub message: String,
}

pub fn report_entries(tx: &Tx<'_>, uuid: Uuid) -> Result<Vec<ReportEntry>> {
    let id = tx.require_node_id(uuid)?;
    let mut stmt = tx.conn().prepare_cached("SELECT at, category, message FROM process_report WHERE node_id = ?1 ORDER BY id")?;
    let rows = stmt.query_map(params![id], |r| Ok(ReportEntry { at: r.get(0)?, category: r.get(1)?, message: r.get(2)? }))?;
    Ok(rows.collect::<rusqlite::Result<_>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProcessState::*;

    #[test]
    fn transition_relation() {
        assert!(Created.can_become(Running));
        assert!(!Created.can_become(Waiting));
        assert!(!Created.can_become(Finished));
        assert!(Running.can_become(Waiting) && Waiting.can_become(Running));
        assert!(Waiting.can_become(Paused) && Paused.can_become(Waiting) && Paused.can_become(Running));
        assert!(!Paused.can_become(Finished));
        for t in [Finished, Excepted, Killed] {
            assert!(Running.can_become(t) && Waiting.can_become(t));
            assert!(ProcessState::ALL.iter().all(|s| !t.can_become(*s)));
        }
    }
}
