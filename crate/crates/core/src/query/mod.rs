//! Graph-pattern queries and provenance traversal.
//!
//! A [`QueryPlan`] is a sequence of tagged vertex patterns. Each pattern may
//! constrain the kind of node it binds, filter on node properties, relate to
//! an earlier pattern through a link or a data-provenance path, and project
//! properties into the result rows. Matching is homomorphic: two patterns may
//! bind the same node. Every embedding (including the choice of link when
//! several links connect the same pair) yields one row.

mod filter;
mod plan;
mod traverse;

use std::collections::HashMap;
use std::rc::Rc;

use rusqlite::params;
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use filter::{format_filters, like, parse_filters, values_equal, FilterExpr, Op};
pub use plan::{is_node_path, EdgeSpec, Pattern, QueryPlan, Relation};
pub use traverse::{ancestor_ids, ancestors_of, descendant_ids, descendants_of, Direction};

use crate::attrs;
use crate::error::Result;
use crate::kind::NodeKind;
use crate::node::Node;
use crate::store::{fmt_ts, Tx};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("duplicate tag `{0}`")]
    DuplicateTag(String),
    #[error("unknown property path `{0}`")]
    UnknownPath(String),
    #[error("malformed filter: {0}")]
    MalformedFilter(String),
    #[error("filter syntax: {0}")]
    Syntax(String),
    #[error("malformed plan: {0}")]
    MalformedPlan(String),
    #[error("{0}")]
    UnknownKind(String),
    #[error("the transitive-closure table is not maintained by this store")]
    TableUnavailable,
}

/// Value of a node property path; `None` when absent.
pub fn node_property(node: &Node, path: &str) -> Option<Value> {
    let (root, rest) = match path.split_once('.') {
        Some((r, rest)) => (r, Some(rest)),
        None => (path, None),
    };
    match (root, rest) {
        ("*", None) => Some(node.summary()),
        ("id", None) => node.id().map(Value::from),
        ("uuid", None) => Some(json!(node.uuid().to_string())),
        ("kind", None) => Some(json!(node.kind().as_str())),
        ("label", None) => Some(json!(node.label())),
        ("description", None) => Some(json!(node.description())),
        ("ctime", None) => node.ctime().map(|t| json!(fmt_ts(t))),
        ("mtime", None) => node.mtime().map(|t| json!(fmt_ts(t))),
        ("computer", None) => node.computer().map(|c| json!(c)),
        ("hash", None) => node.hash().map(|h| json!(h)),
        ("attributes", None) => Some(Value::Object(node.attributes().clone())),
        ("extras", None) => Some(Value::Object(node.extras().clone())),
        ("attributes", Some(p)) => attrs::get_path(node.attributes(), p).cloned(),
        ("extras", Some(p)) => attrs::get_path(node.extras(), p).cloned(),
        _ => None,
    }
}

/// Whether `node` satisfies every filter.
pub fn node_matches(node: &Node, filters: &[FilterExpr]) -> bool {
    filters.iter().all(|f| f.matches(node_property(node, &f.path).as_ref()))
}

/// One embedding: bound node id per pattern and the edge used to reach it
/// (link id for direct relations, depth for path relations).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Embedding {
    pub nodes: Vec<i64>,
    pub edges: Vec<Option<i64>>,
}

struct Matcher<'t, 'a> {
    tx: &'t Tx<'a>,
    plan: &'t QueryPlan,
    tag_index: HashMap<&'t str, usize>,
    nodes: HashMap<i64, Rc<Node>>,
    free: HashMap<usize, Rc<Vec<i64>>>,
}

impl<'t, 'a> Matcher<'t, 'a> {
    fn new(tx: &'t Tx<'a>, plan: &'t QueryPlan) -> Result<Self> {
        plan.validate()?;
        let tag_index = plan.patterns.iter().enumerate().map(|(i, p)| (p.tag.as_str(), i)).collect();
        Ok(Matcher { tx, plan, tag_index, nodes: HashMap::new(), free: HashMap::new() })
    }

    fn node(&mut self, id: i64) -> Result<Rc<Node>> {
        if let Some(n) = self.nodes.get(&id) {
            return Ok(n.clone());
        }
        let n = Rc::new(self.tx.get_node_by_id(id)?);
        self.nodes.insert(id, n.clone());
        Ok(n)
    }

    fn kind_ok(&self, pattern: &Pattern, node: &Node) -> Result<bool> {
        Ok(match &pattern.kind {
            Some(k) => node.kind().is_a(&NodeKind::new(k)?),
            None => true,
        })
    }

    fn accepts(&mut self, index: usize, id: i64) -> Result<bool> {
        let pattern = &self.plan.patterns[index];
        let node = self.node(id)?;
        Ok(self.kind_ok(pattern, &node)? && node_matches(&node, &pattern.filters))
    }

    /// Candidates for a pattern with no edge constraint, ascending id.
    fn free_candidates(&mut self, index: usize) -> Result<Rc<Vec<i64>>> {
        if let Some(c) = self.free.get(&index) {
            return Ok(c.clone());
        }
        let pattern = &self.plan.patterns[index];
        let pinned = pattern.filters.iter().find(|f| f.op == Op::Eq && (f.path == "uuid" || f.path == "id"));
        let raw: Vec<i64> = if let Some(f) = pinned {
            let sql = if f.path == "uuid" { "SELECT id FROM nodes WHERE uuid = ?1" } else { "SELECT id FROM nodes WHERE id = ?1" };
            let key = match &f.value {
                Value::String(s) => rusqlite::types::Value::Text(s.clone()),
                Value::Number(n) if n.is_i64() => rusqlite::types::Value::Integer(n.as_i64().unwrap()),
                _ => rusqlite::types::Value::Null,
            };
            let mut stmt = self.tx.conn().prepare_cached(sql)?;
            let rows = stmt.query_map(params![key], |r| r.get(0))?;
            rows.collect::<rusqlite::Result<_>>()?
        } else if let Some(k) = &pattern.kind {
            let mut stmt = self.tx.conn().prepare_cached("SELECT id FROM nodes WHERE kind = ?1 OR kind LIKE ?2 ORDER BY id")?;
            let rows = stmt.query_map(params![k, format!("{k}.%")], |r| r.get(0))?;
            rows.collect::<rusqlite::Result<_>>()?
        } else {
            let mut stmt = self.tx.conn().prepare_cached("SELECT id FROM nodes ORDER BY id")?;
            let rows = stmt.query_map([], |r| r.get(0))?;
            rows.collect::<rusqlite::Result<_>>()?
        };
        let mut out = Vec::with_capacity(raw.len());
        for id in raw {
            if self.accepts(index, id)? {
                out.push(id);
            }
        }
        let out = Rc::new(out);
        self.free.insert(index, out.clone());
        Ok(out)
    }

    /// (node id, edge key) pairs reachable from `anchor` under `edge`.
    fn related(&mut self, index: usize, edge: &EdgeSpec, anchor: i64) -> Result<Vec<(i64, i64)>> {
        let mut out = Vec::new();
        match edge.relation {
            Relation::WithIncoming | Relation::WithOutgoing => {
                let outgoing = edge.relation == Relation::WithIncoming;
                for (link_id, other, link_type, label) in self.tx.neighbours(anchor, outgoing)? {
                    let doc = json!({"label": label, "type": link_type.as_str()});
                    let ok = edge.filters.iter().all(|f| f.matches(doc.get(&f.path)));
                    if ok && self.accepts(index, other)? {
                        out.push((other, link_id));
                    }
                }
            }
            Relation::WithAncestors | Relation::WithDescendants => {
                let dir = if edge.relation == Relation::WithAncestors { Direction::Descendants } else { Direction::Ancestors };
                let found = traverse::related_ids(self.tx, anchor, dir, self.tx.tc_mode(), None)?;
                for (other, depth) in found {
                    let doc = json!({"depth": depth});
                    let ok = edge.filters.iter().all(|f| f.matches(doc.get(&f.path)));
                    if ok && self.accepts(index, other)? {
                        out.push((other, depth));
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    fn walk(&mut self, index: usize, current: &mut Embedding, sink: &mut dyn FnMut(&Embedding)) -> Result<()> {
        if index == self.plan.patterns.len() {
            sink(current);
            return Ok(());
        }
        let pattern = &self.plan.patterns[index];
        match pattern.edge.clone() {
            None => {
                let cands = self.free_candidates(index)?;
                for &id in cands.iter() {
                    current.nodes.push(id);
                    current.edges.push(None);
                    self.walk(index + 1, current, sink)?;
                    current.nodes.pop();
                    current.edges.pop();
                }
            }
            Some(edge) => {
                let anchor = current.nodes[self.tag_index[edge.tag.as_str()]];
                for (id, key) in self.related(index, &edge, anchor)? {
                    current.nodes.push(id);
                    current.edges.push(Some(key));
                    self.walk(index + 1, current, sink)?;
                    current.nodes.pop();
                    current.edges.pop();
                }
            }
        }
        Ok(())
    }

    fn embeddings(&mut self) -> Result<Vec<Embedding>> {
        let mut out = Vec::new();
        if self.plan.patterns.is_empty() {
            return Ok(out);
        }
        let mut current = Embedding { nodes: Vec::new(), edges: Vec::new() };
        self.walk(0, &mut current, &mut |e| out.push(e.clone()))?;
        out.sort();
        Ok(out)
    }

    fn count(&mut self) -> Result<usize> {
        if self.plan.patterns.is_empty() {
            return Ok(0);
        }
        let mut n = 0;
        let mut current = Embedding { nodes: Vec::new(), edges: Vec::new() };
        self.walk(0, &mut current, &mut |_| n += 1)?;
        Ok(n)
    }
}

/// All embeddings in deterministic order (node ids in append order, then edges).
pub fn embeddings(tx: &Tx<'_>, plan: &QueryPlan) -> Result<Vec<Embedding>> {
    Matcher::new(tx, plan)?.embeddings()
}

/// One row per embedding, holding the projected values in plan order.
pub fn all(tx: &Tx<'_>, plan: &QueryPlan) -> Result<Vec<Vec<Value>>> {
    let mut m = Matcher::new(tx, plan)?;
    let embeddings = m.embeddings()?;
    let projections = plan.projections();
    let mut rows = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        let mut row = Vec::with_capacity(projections.len());
        for (i, path) in &projections {
            let node = m.node(e.nodes[*i])?;
            row.push(node_property(&node, path).unwrap_or(Value::Null));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Number of embeddings, without building rows.
pub fn count(tx: &Tx<'_>, plan: &QueryPlan) -> Result<usize> {
    Matcher::new(tx, plan)?.count()
}

/// Rows as maps keyed `tag.path`, for structured output.
pub fn all_as_maps(tx: &Tx<'_>, plan: &QueryPlan) -> Result<Vec<Map<String, Value>>> {
    let keys: Vec<String> = plan.projections().iter().map(|(i, p)| format!("{}.{}", plan.patterns[*i].tag, p)).collect();
    Ok(all(tx, plan)?
        .into_iter()
        .map(|row| keys.iter().cloned().zip(row).collect())
        .collect())
}

/// Nodes matching a flat filter list, ascending id; used by listings.
pub fn filter_nodes(tx: &Tx<'_>, filters: &[FilterExpr]) -> Result<Vec<Node>> {
    let plan = QueryPlan::new().append(Pattern::new("node").filters(filters.iter().cloned()))?;
    let mut m = Matcher::new(tx, &plan)?;
    let ids = m.free_candidates(0)?;
    ids.iter().map(|&id| m.node(id).map(|n| (*n).clone())).collect()
}
