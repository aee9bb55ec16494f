use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::filter::{FilterExpr, Op};
use super::QueryError;
use crate::kind::NodeKind;

/// How a pattern vertex relates to an earlier one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// This vertex has a link pointing to the referenced vertex.
    WithOutgoing,
    /// This vertex has a link coming from the referenced vertex.
    WithIncoming,
    /// The referenced vertex is a data-provenance ancestor of this one.
    WithAncestors,
    /// The referenced vertex is a data-provenance descendant of this one.
    WithDescendants,
}

impl Relation {
    pub(crate) fn edge_paths(self) -> &'static [&'static str] {
        match self {
            Relation::WithOutgoing | Relation::WithIncoming => &["label", "type"],
            Relation::WithAncestors | Relation::WithDescendants => &["depth"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub relation: Relation,
    pub tag: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<FilterExpr>,
}

/// One tagged vertex of the pattern graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<FilterExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub project: Vec<String>,
}

impl Pattern {
    pub fn new(tag: impl Into<String>) -> Self {
        Pattern { tag: tag.into(), kind: None, filters: Vec::new(), edge: None, project: Vec::new() }
    }

    pub fn kind(mut self, kind: &str) -> Self {
        self.kind = Some(kind.to_string());
        self
    }

    pub fn filter(mut self, path: &str, op: Op, value: Value) -> Self {
        self.filters.push(FilterExpr { path: path.to_string(), op, value });
        self
    }

    pub fn filters(mut self, filters: impl IntoIterator<Item = FilterExpr>) -> Self {
        self.filters.extend(filters);
        self
    }

    fn relate(mut self, relation: Relation, tag: &str) -> Self {
        self.edge = Some(EdgeSpec { relation, tag: tag.to_string(), filters: Vec::new() });
        self
    }

    pub fn with_outgoing(self, tag: &str) -> Self {
        self.relate(Relation::WithOutgoing, tag)
    }

    pub fn with_incoming(self, tag: &str) -> Self {
        self.relate(Relation::WithIncoming, tag)
    }

    pub fn with_ancestors(self, tag: &str) -> Self {
        self.relate(Relation::WithAncestors, tag)
    }

    pub fn with_descendants(self, tag: &str) -> Self {
        self.relate(Relation::WithDescendants, tag)
    }

    /// Adds a filter on the edge to the referenced vertex (`label`, `type`
    /// for direct links; `depth` for ancestor relations).
    pub fn edge_filter(mut self, path: &str, op: Op, value: Value) -> Self {
        if let Some(edge) = self.edge.as_mut() {
            edge.filters.push(FilterExpr { path: path.to_string(), op, value });
        }
        self
    }

    pub fn project(mut self, path: &str) -> Self {
        self.project.push(path.to_string());
        self
    }
}

const NODE_FIELDS: [&str; 9] = ["id", "uuid", "kind", "label", "description", "ctime", "mtime", "computer", "hash"];

/// Whether `path` names a node property: a scalar field, or a location
/// inside `attributes` / `extras`.
pub fn is_node_path(path: &str) -> bool {
    let root = path.split('.').next().unwrap_or("");
    (NODE_FIELDS.contains(&root) && root == path) || root == "attributes" || root == "extras"
}

fn is_projection(path: &str) -> bool {
    path == "*" || is_node_path(path)
}

/// An ordered sequence of tagged patterns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub patterns: Vec<Pattern>,
}

impl QueryPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates `pattern` against the plan so far and appends it.
    pub fn append(mut self, pattern: Pattern) -> Result<Self, QueryError> {
        self.check_pattern(&pattern, self.patterns.len())?;
        self.patterns.push(pattern);
        Ok(self)
    }

    pub fn push(&mut self, pattern: Pattern) -> Result<(), QueryError> {
        self.check_pattern(&pattern, self.patterns.len())?;
        self.patterns.push(pattern);
        Ok(())
    }

    /// Re-validates a deserialized plan.
    pub fn validate(&self) -> Result<(), QueryError> {
        for (i, p) in self.patterns.iter().enumerate() {
            self.check_pattern(p, i)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, QueryError> {
        let plan: QueryPlan = serde_json::from_str(text).map_err(|e| QueryError::MalformedPlan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    fn check_pattern(&self, p: &Pattern, position: usize) -> Result<(), QueryError> {
        let earlier = &self.patterns[..position];
        if p.tag.is_empty() {
            return Err(QueryError::MalformedPlan("empty tag".into()));
        }
        if earlier.iter().any(|q| q.tag == p.tag) {
            return Err(QueryError::DuplicateTag(p.tag.clone()));
        }
        if let Some(kind) = &p.kind {
            NodeKind::new(kind).map_err(|e| QueryError::UnknownKind(e.to_string()))?;
        }
        for f in &p.filters {
            f.check_operand()?;
            if !is_node_path(&f.path) {
                return Err(QueryError::UnknownPath(f.path.clone()));
            }
        }
        if let Some(edge) = &p.edge {
            if !earlier.iter().any(|q| q.tag == edge.tag) {
                return Err(QueryError::UnknownTag(edge.tag.clone()));
            }
            for f in &edge.filters {
                f.check_operand()?;
                if !edge.relation.edge_paths().contains(&f.path.as_str()) {
                    return Err(QueryError::UnknownPath(f.path.clone()));
                }
            }
        }
        for proj in &p.project {
            if !is_projection(proj) {
                return Err(QueryError::UnknownPath(proj.clone()));
            }
        }
        Ok(())
    }

    pub fn tags(&self) -> BTreeSet<&str> {
        self.patterns.iter().map(|p| p.tag.as_str()).collect()
    }

    /// Projections in row order as (pattern index, path); defaults to the
    /// uuid of every pattern when nothing is projected.
    pub fn projections(&self) -> Vec<(usize, String)> {
        let explicit: Vec<(usize, String)> = self
            .patterns
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.project.iter().map(move |path| (i, path.clone())))
            .collect();
        if explicit.is_empty() {
            (0..self.patterns.len()).map(|i| (i, "uuid".to_string())).collect()
        } else {
            explicit
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn append_checks_tags() {
        let plan = QueryPlan::new().append(Pattern::new("calculation").kind(NodeKind::CALCJOB)).unwrap();
        assert_eq!(plan.patterns.len(), 1);
        let err = plan.clone().append(Pattern::new("x").with_outgoing("nosuch")).unwrap_err();
        assert!(matches!(err, QueryError::UnknownTag(_)));
        let err = plan.clone().append(Pattern::new("calculation")).unwrap_err();
        assert!(matches!(err, QueryError::DuplicateTag(_)));
    }

    #[test]
    fn paths_and_operands_are_checked() {
        let e = QueryPlan::new().append(Pattern::new("a").filter("colour", Op::Eq, json!(1))).unwrap_err();
        assert!(matches!(e, QueryError::UnknownPath(_)));
        let e = QueryPlan::new().append(Pattern::new("a").filter("label", Op::In, json!(1))).unwrap_err();
        assert!(matches!(e, QueryError::MalformedFilter(_)));
        let e = QueryPlan::new().append(Pattern::new("a").kind("data.nosuch")).unwrap_err();
        assert!(matches!(e, QueryError::UnknownKind(_)));
    }

    #[test]
    fn json_round_trip_and_default_projection() {
        let plan = QueryPlan::new()
            .append(Pattern::new("c").kind(NodeKind::CALCULATION))
            .unwrap()
            .append(Pattern::new("d").kind(NodeKind::DICT).with_incoming("c").edge_filter("label", Op::Eq, json!("out")))
            .unwrap();
        let back = QueryPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
        assert_eq!(plan.projections(), vec![(0, "uuid".into()), (1, "uuid".into())]);
    }
}
