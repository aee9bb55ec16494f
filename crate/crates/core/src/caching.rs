//! Cache-hit short-circuiting of calculations.
//!
//! Before a calculation executes, its hash (content plus input hashes) is
//! looked up among earlier calculations that finished with exit code 0. On a
//! hit the outputs of the earlier run are cloned and linked to the new node,
//! and the new node's `_cache_source` extra names the source.

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::graph::{Link, LinkType};
use crate::hashing::NodeHash;
use crate::node::Node;
use crate::store::Tx;

pub const CACHE_SOURCE_EXTRA: &str = "_cache_source";

/// Which process types may reuse earlier results. `disabled_for` wins over
/// `enabled_for`, which wins over `default`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachingConfig {
    #[serde(default)]
    pub default: bool,
    #[serde(default)]
    pub enabled_for: Vec<String>,
    #[serde(default)]
    pub disabled_for: Vec<String>,
}

fn any_match(globs: &[String], process_type: &str) -> bool {
    globs
        .iter()
        .any(|g| glob::Pattern::new(g).map(|p| p.matches(process_type)).unwrap_or(false))
}

impl CachingConfig {
    pub fn on() -> Self {
        CachingConfig { default: true, ..Default::default() }
    }

    pub fn is_enabled(&self, process_type: &str) -> bool {
        if any_match(&self.disabled_for, process_type) {
            false
        } else if any_match(&self.enabled_for, process_type) {
            true
        } else {
            self.default
        }
    }
}

/// Recomputes and persists the hash of a stored node.
pub fn compute_hash(tx: &Tx<'_>, node: &Node) -> Result<NodeHash> {
    if !node.is_stored() {
        return Err(Error::NotStored(node.uuid()));
    }
    tx.refresh_hash(node.uuid())
}

/// Earliest finished(0) calculation with the same hash as `calc`.
pub fn find_cache_source(tx: &Tx<'_>, calc: Uuid) -> Result<Option<Uuid>> {
    let node = tx.get_node(calc)?;
    if !node.kind().is_calculation() {
        return Ok(None);
    }
    let Some(hash) = node.hash() else { return Ok(None) };
    let found: Option<String> = tx
        .conn()
        .prepare_cached(
            "SELECT n.uuid FROM nodes n JOIN processes p ON p.node_id = n.id
             WHERE n.hash = ?1 AND n.id != ?2 AND n.kind = ?3 AND p.state = 'finished' AND p.exit_code = 0
             ORDER BY n.id LIMIT 1",
        )?
        .query_row(params![hash, node.id(), node.kind().as_str()], |r| r.get(0))
        .optional()?;
    found
        .map(|s| Uuid::parse_str(&s).map_err(|e| Error::NotFound(format!("cache source {s}: {e}"))))
        .transpose()
}

/// Clones every CREATE output of `source` onto `target`. Returns `false`
/// (changing nothing) when the source has no outputs or a payload is gone.
pub fn clone_outputs_from(tx: &Tx<'_>, source: Uuid, target: Uuid) -> Result<bool> {
    let mut outputs = Vec::new();
    for rec in tx.links_from(source)? {
        if rec.link.link_type != LinkType::Create {
            continue;
        }
        let loaded = match tx.get_node_with_contents(rec.link.target) {
            Ok(n) => n,
            Err(Error::NotFound(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        outputs.push((rec.link.label.clone(), loaded));
    }
    if outputs.is_empty() {
        return Ok(false);
    }
    for (label, original) in outputs {
        let mut copy = original.clone_unstored()?;
        tx.store_node(&mut copy)?;
        tx.insert_link(&Link { source: target, target: copy.uuid(), link_type: LinkType::Create, label })?;
    }
    tx.set_extra(target, CACHE_SOURCE_EXTRA, json!(source.to_string()))?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glob_precedence() {
        let cfg = CachingConfig {
            default: false,
            enabled_for: vec!["core.arithmetic.*".into()],
            disabled_for: vec!["core.arithmetic.add_job".into()],
        };
        assert!(cfg.is_enabled("core.arithmetic.add"));
        assert!(!cfg.is_enabled("core.arithmetic.add_job"));
        assert!(!cfg.is_enabled("other"));
        assert!(CachingConfig::on().is_enabled("anything"));
        assert!(!CachingConfig::default().is_enabled("anything"));
    }
}
