//! Slow, obviously-correct reference implementations used to check the
//! query engine and the closure strategies.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde_json::{json, Value};
use uuid::Uuid;

use crate::error::Result;
use crate::graph::{Link, LinkType};
use crate::kind::NodeKind;
use crate::node::Node;
use crate::query::{node_matches, node_property, Embedding, QueryPlan, Relation};
use crate::store::Tx;

/// Every node and link of a store, keyed by local id.
pub struct Snapshot {
    pub nodes: BTreeMap<i64, Node>,
    /// (link id, source id, target id, type, label)
    pub links: Vec<(i64, i64, i64, String, String)>,
}

impl Snapshot {
    pub fn load(tx: &Tx<'_>) -> Result<Snapshot> {
        let mut nodes = BTreeMap::new();
        for n in tx.nodes(None)? {
            nodes.insert(n.id().expect("stored node has an id"), n);
        }
        let mut stmt = tx.conn().prepare("SELECT id, source, target, type, label FROM links")?;
        let links = stmt
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)))?
            .collect::<rusqlite::Result<_>>()?;
        Ok(Snapshot { nodes, links })
    }

    /// Successor lists over {INPUT_CALC, CREATE}.
    pub fn data_provenance(&self) -> HashMap<i64, Vec<i64>> {
        let mut succ: HashMap<i64, Vec<i64>> = HashMap::new();
        for (_, s, t, ty, _) in &self.links {
            if ty == "INPUT_CALC" || ty == "CREATE" {
                succ.entry(*s).or_default().push(*t);
            }
        }
        succ
    }
}

/// Minimal hop count to every node reachable from `start`, by depth-first
/// search that re-expands a node whenever a shorter path to it appears.
pub fn dfs_depths(succ: &HashMap<i64, Vec<i64>>, start: i64) -> BTreeMap<i64, i64> {
    let mut best: BTreeMap<i64, i64> = BTreeMap::new();
    let mut stack = vec![(start, 0i64)];
    while let Some((n, d)) = stack.pop() {
        for &m in succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if m != start && best.get(&m).is_none_or(|&b| d + 1 < b) {
                best.insert(m, d + 1);
                stack.push((m, d + 1));
            }
        }
    }
    best
}

/// The same adjacency reversed.
pub fn reverse(succ: &HashMap<i64, Vec<i64>>) -> HashMap<i64, Vec<i64>> {
    let mut pred: HashMap<i64, Vec<i64>> = HashMap::new();
    for (s, ts) in succ {
        for t in ts {
            pred.entry(*t).or_default().push(*s);
        }
    }
    pred
}

/// Every embedding of `plan`, found by trying each assignment of nodes to
/// patterns and keeping those whose constraints all hold.
pub fn embeddings(snap: &Snapshot, plan: &QueryPlan) -> Vec<Embedding> {
    let k = plan.patterns.len();
    if k == 0 || snap.nodes.is_empty() {
        return Vec::new();
    }
    let tag_index: HashMap<&str, usize> = plan.patterns.iter().enumerate().map(|(i, p)| (p.tag.as_str(), i)).collect();
    let ids: Vec<i64> = snap.nodes.keys().copied().collect();
    let succ = snap.data_provenance();
    let mut depth_cache: HashMap<i64, BTreeMap<i64, i64>> = HashMap::new();
    let mut out = Vec::new();
    let mut assignment = vec![0usize; k];
    'outer: loop {
        let nodes: Vec<i64> = assignment.iter().map(|&i| ids[i]).collect();
        // Edge choices per pattern; an empty list rules the assignment out.
        let mut choices: Vec<Vec<Option<i64>>> = Vec::with_capacity(k);
        for (i, p) in plan.patterns.iter().enumerate() {
            let node = &snap.nodes[&nodes[i]];
            let kind_ok = match &p.kind {
                Some(kind) => NodeKind::new(kind).is_ok_and(|kind| node.kind().is_a(&kind)),
                None => true,
            };
            if !kind_ok || !node_matches(node, &p.filters) {
                choices.clear();
                break;
            }
            let Some(edge) = &p.edge else {
                choices.push(vec![None]);
                continue;
            };
            let anchor = nodes[tag_index[edge.tag.as_str()]];
            let mut keys = Vec::new();
            match edge.relation {
                Relation::WithIncoming | Relation::WithOutgoing => {
                    let (src, tgt) = if edge.relation == Relation::WithIncoming { (anchor, nodes[i]) } else { (nodes[i], anchor) };
                    for (id, s, t, ty, label) in &snap.links {
                        let doc = json!({"label": label, "type": ty});
                        if *s == src && *t == tgt && edge.filters.iter().all(|f| f.matches(doc.get(&f.path))) {
                            keys.push(Some(*id));
                        }
                    }
                }
                Relation::WithAncestors | Relation::WithDescendants => {
                    let (from, to) = if edge.relation == Relation::WithAncestors { (anchor, nodes[i]) } else { (nodes[i], anchor) };
                    let depths = depth_cache.entry(from).or_insert_with(|| dfs_depths(&succ, from));
                    if let Some(&d) = depths.get(&to) {
                        let doc = json!({"depth": d});
                        if edge.filters.iter().all(|f| f.matches(doc.get(&f.path))) {
                            keys.push(Some(d));
                        }
                    }
                }
            }
            if keys.is_empty() {
                choices.clear();
                break;
            }
            choices.push(keys);
        }
        if choices.len() == k {
            let mut pick = vec![0usize; k];
            loop {
                let edges = pick.iter().zip(&choices).map(|(&j, c)| c[j]).collect();
                out.push(Embedding { nodes: nodes.clone(), edges });
                let mut pos = 0;
                while pos < k {
                    pick[pos] += 1;
                    if pick[pos] < choices[pos].len() {
                        break;
                    }
                    pick[pos] = 0;
                    pos += 1;
                }
                if pos == k {
                    break;
                }
            }
        }
        let mut pos = 0;
        while pos < k {
            assignment[pos] += 1;
            if assignment[pos] < ids.len() {
                continue 'outer;
            }
            assignment[pos] = 0;
            pos += 1;
        }
        break;
    }
    out.sort();
    out
}

/// Projected rows for a list of embeddings, in embedding order.
pub fn rows(snap: &Snapshot, plan: &QueryPlan, embeddings: &[Embedding]) -> Vec<Vec<Value>> {
    let projections = plan.projections();
    embeddings
        .iter()
        .map(|e| {
            projections
                .iter()
                .map(|(i, path)| node_property(&snap.nodes[&e.nodes[*i]], path).unwrap_or(Value::Null))
                .collect()
        })
        .collect()
}

/// Whether a link type may join these endpoint kinds.
pub fn family_ok(ty: LinkType, s: &NodeKind, t: &NodeKind) -> bool {
    let (data, calc, flow) = (NodeKind::is_data, NodeKind::is_calculation, NodeKind::is_workflow);
    match ty {
        LinkType::InputCalc => data(s) && calc(t),
        LinkType::InputWork => data(s) && flow(t),
        LinkType::Create => calc(s) && data(t),
        LinkType::Return => flow(s) && data(t),
        LinkType::CallCalc => flow(s) && calc(t),
        LinkType::CallWork => flow(s) && flow(t),
    }
}

fn dp_reaches(links: &[Link], from: Uuid, to: Uuid) -> bool {
    let mut seen = HashSet::from([from]);
    let mut stack = vec![from];
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        for l in links.iter().filter(|l| l.source == n && l.link_type.is_data_provenance()) {
            if seen.insert(l.target) {
                stack.push(l.target);
            }
        }
    }
    false
}

/// Every rule the candidate breaks, computed straight from the rule list.
pub fn broken_rules(kinds: &HashMap<Uuid, NodeKind>, links: &[Link], c: &Link) -> BTreeSet<&'static str> {
    let mut out = BTreeSet::new();
    let ty = c.link_type;
    if c.source == c.target {
        out.insert("self-link");
    }
    if !family_ok(ty, &kinds[&c.source], &kinds[&c.target]) {
        out.insert("endpoint-kind");
    }
    let into = || links.iter().filter(|l| l.target == c.target);
    if ty == LinkType::Create && into().any(|l| l.link_type == LinkType::Create) {
        out.insert("creator-cardinality");
    }
    if ty.is_call() && into().any(|l| l.link_type.is_call()) {
        out.insert("caller-cardinality");
    }
    if ty.is_input() && into().any(|l| l.link_type.is_input() && l.label == c.label) {
        out.insert("label-uniqueness");
    }
    if ty.is_output() && links.iter().any(|l| l.source == c.source && l.link_type.is_output() && l.label == c.label) {
        out.insert("label-uniqueness");
    }
    if ty.is_data_provenance() && dp_reaches(links, c.target, c.source) {
        out.insert("acyclicity");
    }
    out
}
