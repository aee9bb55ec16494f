//! Ancestor/descendant traversal over the data-provenance DAG
//! ({INPUT_CALC, CREATE} links) with minimal hop counts.

use std::collections::{BTreeMap, HashMap};

use rusqlite::params;
use uuid::Uuid;

use super::QueryError;
use crate::error::Result;
use crate::store::{TcMode, Tx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Ancestors,
    Descendants,
}

/// Reachable node ids with their minimal depth, ascending id.
pub(crate) fn related_ids(tx: &Tx<'_>, id: i64, dir: Direction, mode: TcMode, max_depth: Option<u32>) -> Result<Vec<(i64, i64)>> {
    let mut out = match mode {
        TcMode::Table => {
            if tx.tc_mode() != TcMode::Table {
                return Err(QueryError::TableUnavailable.into());
            }
            let sql = match dir {
                Direction::Descendants => "SELECT descendant, depth FROM tc WHERE ancestor = ?1 AND depth <= ?2",
                Direction::Ancestors => "SELECT ancestor, depth FROM tc WHERE descendant = ?1 AND depth <= ?2",
            };
            let limit = max_depth.map(i64::from).unwrap_or(i64::MAX);
            let mut stmt = tx.conn().prepare_cached(sql)?;
            let rows = stmt.query_map(params![id, limit], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?)))?;
            rows.collect::<rusqlite::Result<Vec<_>>>()?
        }
        TcMode::Otf => frontier(tx, id, dir, max_depth)?,
    };
    out.sort_unstable();
    Ok(out)
}

/// Breadth-first frontier expansion until no new node appears.
fn frontier(tx: &Tx<'_>, start: i64, dir: Direction, max_depth: Option<u32>) -> Result<Vec<(i64, i64)>> {
    let sql = match dir {
        Direction::Descendants => "SELECT target FROM links WHERE source = ?1 AND type IN ('INPUT_CALC', 'CREATE')",
        Direction::Ancestors => "SELECT source FROM links WHERE target = ?1 AND type IN ('INPUT_CALC', 'CREATE')",
    };
    let mut stmt = tx.conn().prepare_cached(sql)?;
    let mut depth: HashMap<i64, i64> = HashMap::new();
    let mut current = vec![start];
    let mut level = 0i64;
    while !current.is_empty() && max_depth.is_none_or(|m| level < i64::from(m)) {
        level += 1;
        let mut next = Vec::new();
        for n in current {
            let rows = stmt.query_map(params![n], |r| r.get::<_, i64>(0))?;
            for m in rows {
                let m = m?;
                if m != start && !depth.contains_key(&m) {
                    depth.insert(m, level);
                    next.push(m);
                }
            }
        }
        current = next;
    }
    Ok(depth.into_iter().collect())
}

pub fn descendant_ids(tx: &Tx<'_>, id: i64, mode: TcMode, max_depth: Option<u32>) -> Result<Vec<(i64, i64)>> {
    related_ids(tx, id, Direction::Descendants, mode, max_depth)
}

pub fn ancestor_ids(tx: &Tx<'_>, id: i64, mode: TcMode, max_depth: Option<u32>) -> Result<Vec<(i64, i64)>> {
    related_ids(tx, id, Direction::Ancestors, mode, max_depth)
}

fn by_uuid(tx: &Tx<'_>, uuid: Uuid, dir: Direction, mode: TcMode, max_depth: Option<u32>) -> Result<BTreeMap<Uuid, u32>> {
    let id = tx.require_node_id(uuid)?;
    related_ids(tx, id, dir, mode, max_depth)?
        .into_iter()
        .map(|(n, d)| Ok((tx.node_uuid(n)?, d as u32)))
        .collect()
}

/// Every data-provenance ancestor of `uuid` with its minimal hop count.
pub fn ancestors_of(tx: &Tx<'_>, uuid: Uuid, mode: TcMode, max_depth: Option<u32>) -> Result<BTreeMap<Uuid, u32>> {
    by_uuid(tx, uuid, Direction::Ancestors, mode, max_depth)
}

/// Every data-provenance descendant of `uuid` with its minimal hop count.
pub fn descendants_of(tx: &Tx<'_>, uuid: Uuid, mode: TcMode, max_depth: Option<u32>) -> Result<BTreeMap<Uuid, u32>> {
    by_uuid(tx, uuid, Direction::Descendants, mode, max_depth)
}
