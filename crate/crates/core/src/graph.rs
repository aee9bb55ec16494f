//! Link taxonomy and the structural rules of the provenance graph.
//!
//! Everything here is a pure function over a [`GraphView`]. The store
//! implements the view over a transaction and is responsible for making
//! validate-then-insert atomic; [`MemGraph`] is an in-memory view used for
//! fixtures and property tests.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::kind::NodeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinkType {
    InputCalc,
    InputWork,
    Create,
    Return,
    CallCalc,
    CallWork,
}

/// Which family of node an endpoint must belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Data,
    Calculation,
    Workflow,
}

impl Endpoint {
    fn admits(self, kind: &NodeKind) -> bool {
        match self {
            Endpoint::Data => kind.is_data(),
            Endpoint::Calculation => kind.is_calculation(),
            Endpoint::Workflow => kind.is_workflow(),
        }
    }
}

impl LinkType {
    pub const ALL: [LinkType; 6] = [
        LinkType::InputCalc,
        LinkType::InputWork,
        LinkType::Create,
        LinkType::Return,
        LinkType::CallCalc,
        LinkType::CallWork,
    ];

    /// Required (source, target) endpoint families.
    pub fn endpoints(self) -> (Endpoint, Endpoint) {
        use Endpoint::*;
        match self {
            LinkType::InputCalc => (Data, Calculation),
            LinkType::InputWork => (Data, Workflow),
            LinkType::Create => (Calculation, Data),
            LinkType::Return => (Workflow, Data),
            LinkType::CallCalc => (Workflow, Calculation),
            LinkType::CallWork => (Workflow, Workflow),
        }
    }

    /// Links that make up the data-provenance DAG.
    pub fn is_data_provenance(self) -> bool {
        matches!(self, LinkType::InputCalc | LinkType::Create)
    }

    pub fn is_input(self) -> bool {
        matches!(self, LinkType::InputCalc | LinkType::InputWork)
    }

    pub fn is_output(self) -> bool {
        matches!(self, LinkType::Create | LinkType::Return)
    }

    pub fn is_call(self) -> bool {
        matches!(self, LinkType::CallCalc | LinkType::CallWork)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkType::InputCalc => "INPUT_CALC",
            LinkType::InputWork => "INPUT_WORK",
            LinkType::Create => "CREATE",
            LinkType::Return => "RETURN",
            LinkType::CallCalc => "CALL_CALC",
            LinkType::CallWork => "CALL_WORK",
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LinkType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown link type `{s}`"))
    }
}

/// A link label: `[a-z0-9_]{1,255}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LinkLabel(String);

impl LinkLabel {
    pub fn new(label: &str) -> Result<Self, Violation> {
        let ok = !label.is_empty()
            && label.len() <= 255
            && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if ok {
            Ok(LinkLabel(label.to_string()))
        } else {
            Err(Violation::InvalidLabel(label.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LinkLabel {
    type Error = Violation;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        LinkLabel::new(&value)
    }
}

impl From<LinkLabel> for String {
    fn from(l: LinkLabel) -> String {
        l.0
    }
}

impl fmt::Display for LinkLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Link {
    pub source: Uuid,
    pub target: Uuid,
    #[serde(rename = "type")]
    pub link_type: LinkType,
    pub label: LinkLabel,
}

impl Link {
    pub fn new(source: Uuid, target: Uuid, link_type: LinkType, label: &str) -> Result<Self, Violation> {
        Ok(Link { source, target, link_type, label: LinkLabel::new(label)? })
    }
}

/// The specific structural rule a rejected link breaks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("invalid link label `{0}`")]
    InvalidLabel(String),
    #[error("self-link on {0}")]
    SelfLink(Uuid),
    #[error("{link_type} link cannot connect {source_kind} -> {target_kind}")]
    EndpointKind { link_type: LinkType, source_kind: NodeKind, target_kind: NodeKind },
    #[error("data node {0} already has a creator")]
    CreatorCardinality(Uuid),
    #[error("process {0} already has a caller")]
    CallerCardinality(Uuid),
    #[error("input label `{label}` already used on process {process}")]
    InputLabelUniqueness { process: Uuid, label: String },
    #[error("output label `{label}` already used on process {process}")]
    OutputLabelUniqueness { process: Uuid, label: String },
    #[error("link would close a data-provenance cycle through {0:?}")]
    DataProvenanceCycle(Vec<Uuid>),
}

impl Violation {
    /// Stable short name of the broken rule.
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::InvalidLabel(_) => "label-syntax",
            Violation::SelfLink(_) => "self-link",
            Violation::EndpointKind { .. } => "endpoint-kind",
            Violation::CreatorCardinality(_) => "creator-cardinality",
            Violation::CallerCardinality(_) => "caller-cardinality",
            Violation::InputLabelUniqueness { .. } | Violation::OutputLabelUniqueness { .. } => "label-uniqueness",
            Violation::DataProvenanceCycle(_) => "acyclicity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("graph view: {0}")]
pub struct ViewError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("dangling endpoint {0}")]
    Dangling(Uuid),
    #[error("link rejected: {0}")]
    Violation(#[from] Violation),
    #[error(transparent)]
    View(#[from] ViewError),
}

/// Read access to a graph snapshot.
pub trait GraphView {
    /// Kind of a stored node, `None` when absent.
    fn node_kind(&self, node: &Uuid) -> Result<Option<NodeKind>, ViewError>;
    fn links_into(&self, node: &Uuid) -> Result<Vec<Link>, ViewError>;
    fn links_from(&self, node: &Uuid) -> Result<Vec<Link>, ViewError>;
    fn node_uuids(&self) -> Result<Vec<Uuid>, ViewError>;

    /// Shortest data-provenance path `from ->* to`, if any.
    fn data_provenance_path(&self, from: &Uuid, to: &Uuid) -> Result<Option<Vec<Uuid>>, ViewError> {
        let mut parent: HashMap<Uuid, Uuid> = HashMap::new();
        let mut queue = VecDeque::from([*from]);
        let mut seen = HashSet::from([*from]);
        while let Some(n) = queue.pop_front() {
            if n == *to {
                let mut path = vec![n];
                let mut cur = n;
                while let Some(p) = parent.get(&cur) {
                    path.push(*p);
                    cur = *p;
                }
                path.reverse();
                return Ok(Some(path));
            }
            for l in self.links_from(&n)? {
                if l.link_type.is_data_provenance() && seen.insert(l.target) {
                    parent.insert(l.target, n);
                    queue.push_back(l.target);
                }
            }
        }
        Ok(None)
    }
}

/// Checks `candidate` against endpoint, cardinality, label-uniqueness and
/// acyclicity rules given the links already present in `view`.
pub fn validate_link<V: GraphView + ?Sized>(view: &V, candidate: &Link) -> Result<(), LinkError> {
    let source_kind = view.node_kind(&candidate.source)?.ok_or(LinkError::Dangling(candidate.source))?;
    let target_kind = view.node_kind(&candidate.target)?.ok_or(LinkError::Dangling(candidate.target))?;
    LinkLabel::new(candidate.label.as_str())?;
    if candidate.source == candidate.target {
        return Err(Violation::SelfLink(candidate.source).into());
    }
    let ty = candidate.link_type;
    let (src_ep, tgt_ep) = ty.endpoints();
    if !src_ep.admits(&source_kind) || !tgt_ep.admits(&target_kind) {
        return Err(Violation::EndpointKind { link_type: ty, source_kind, target_kind }.into());
    }

    if ty == LinkType::Create || ty.is_call() || ty.is_input() {
        let incoming = view.links_into(&candidate.target)?;
        if ty == LinkType::Create && incoming.iter().any(|l| l.link_type == LinkType::Create) {
            return Err(Violation::CreatorCardinality(candidate.target).into());
        }
        if ty.is_call() && incoming.iter().any(|l| l.link_type.is_call()) {
            return Err(Violation::CallerCardinality(candidate.target).into());
        }
        if ty.is_input() && incoming.iter().any(|l| l.link_type.is_input() && l.label == candidate.label) {
            return Err(Violation::InputLabelUniqueness {
                process: candidate.target,
                label: candidate.label.to_string(),
            }
            .into());
        }
    }
    if ty.is_output() {
        let outgoing = view.links_from(&candidate.source)?;
        if outgoing.iter().any(|l| l.link_type.is_output() && l.label == candidate.label) {
            return Err(Violation::OutputLabelUniqueness {
                process: candidate.source,
                label: candidate.label.to_string(),
            }
            .into());
        }
    }
    if ty.is_data_provenance() {
        if let Some(mut path) = view.data_provenance_path(&candidate.target, &candidate.source)? {
            path.push(candidate.target);
            return Err(Violation::DataProvenanceCycle(path).into());
        }
    }
    Ok(())
}

/// Acyclicity of the {INPUT_CALC, CREATE} subgraph. On failure returns the
/// nodes of one concrete cycle, first node repeated at the end.
pub fn check_data_provenance_acyclic<V: GraphView + ?Sized>(view: &V) -> Result<Result<(), Vec<Uuid>>, ViewError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: HashMap<Uuid, Mark> = HashMap::new();
    let mut roots = view.node_uuids()?;
    roots.sort();
    for root in roots {
        if marks.contains_key(&root) {
            continue;
        }
        // Iterative DFS; the stack holds (node, remaining successors).
        let mut stack: Vec<(Uuid, Vec<Uuid>)> = Vec::new();
        marks.insert(root, Mark::Open);
        stack.push((root, successors(view, &root)?));
        while let Some((node, succ)) = stack.last_mut() {
            let node = *node;
            match succ.pop() {
                Some(next) => match marks.get(&next) {
                    Some(Mark::Open) => {
                        let start = stack.iter().position(|(n, _)| *n == next).expect("open node is on the stack");
                        let mut cycle: Vec<Uuid> = stack[start..].iter().map(|(n, _)| *n).collect();
                        cycle.push(next);
                        return Ok(Err(cycle));
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(next, Mark::Open);
                        let s = successors(view, &next)?;
                        stack.push((next, s));
                    }
                },
                None => {
                    marks.insert(node, Mark::Done);
                    stack.pop();
                }
            }
        }
    }
    Ok(Ok(()))
}

fn successors<V: GraphView + ?Sized>(view: &V, node: &Uuid) -> Result<Vec<Uuid>, ViewError> {
    Ok(view
        .links_from(node)?
        .into_iter()
        .filter(|l| l.link_type.is_data_provenance())
        .map(|l| l.target)
        .collect())
}

/// In-memory graph view.
#[derive(Debug, Default, Clone)]
pub struct MemGraph {
    kinds: HashMap<Uuid, NodeKind>,
    order: Vec<Uuid>,
    links: Vec<Link>,
    into: HashMap<Uuid, Vec<usize>>,
    from: HashMap<Uuid, Vec<usize>>,
}

impl MemGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, kind: NodeKind) -> Uuid {
        let id = Uuid::new_v4();
        self.kinds.insert(id, kind);
        self.order.push(id);
        id
    }

    pub fn add_node_with_uuid(&mut self, uuid: Uuid, kind: NodeKind) {
        if self.kinds.insert(uuid, kind).is_none() {
            self.order.push(uuid);
        }
    }

    /// Validates and inserts.
    pub fn insert_link(&mut self, link: Link) -> Result<(), LinkError> {
        validate_link(self, &link)?;
        self.insert_link_unchecked(link);
        Ok(())
    }

    /// Inserts without any validation; for crafting invalid fixtures.
    pub fn insert_link_unchecked(&mut self, link: Link) {
        let i = self.links.len();
        self.into.entry(link.target).or_default().push(i);
        self.from.entry(link.source).or_default().push(i);
        self.links.push(link);
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&Uuid, &NodeKind)> {
        self.order.iter().map(move |u| (u, &self.kinds[u]))
    }
}

impl GraphView for MemGraph {
    fn node_kind(&self, node: &Uuid) -> Result<Option<NodeKind>, ViewError> {
        Ok(self.kinds.get(node).cloned())
    }

    fn links_into(&self, node: &Uuid) -> Result<Vec<Link>, ViewError> {
        Ok(self.into.get(node).map(|ix| ix.iter().map(|&i| self.links[i].clone()).collect()).unwrap_or_default())
    }

    fn links_from(&self, node: &Uuid) -> Result<Vec<Link>, ViewError> {
        Ok(self.from.get(node).map(|ix| ix.iter().map(|&i| self.links[i].clone()).collect()).unwrap_or_default())
    }

    fn node_uuids(&self) -> Result<Vec<Uuid>, ViewError> {
        Ok(self.order.clone())
    }
}
