//! Hierarchical node kinds.
//!
//! Every node in the provenance graph carries a dotted kind path such as
//! `data.int` or `process.workflow.workchain`. The paths form a tree rooted at
//! `data` and `process`, and a kind "is a" another exactly when the other
//! path is a dotted prefix of it. Plugins can register additional `data.*`
//! kinds at runtime through [`register_data_kind`].

use std::collections::BTreeSet;
use std::fmt;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::KindError;

const BUILTIN_KINDS: &[&str] = &[
    "data",
    "data.int",
    "data.float",
    "data.bool",
    "data.str",
    "data.list",
    "data.dict",
    "data.code",
    "data.remote",
    "data.folder",
    "process",
    "process.calculation",
    "process.calculation.calcjob",
    "process.calculation.calcfunction",
    "process.workflow",
    "process.workflow.workchain",
    "process.workflow.workfunction",
];

fn registry() -> &'static RwLock<BTreeSet<String>> {
    static REGISTRY: OnceLock<RwLock<BTreeSet<String>>> = OnceLock::new();
    REGISTRY.get_or_init(|| RwLock::new(BUILTIN_KINDS.iter().map(|s| s.to_string()).collect()))
}

/// Registers a new data kind (e.g. `data.structure`), including any missing
/// intermediate paths. Process kinds are fixed and cannot be extended.
pub fn register_data_kind(path: &str) -> Result<NodeKind, KindError> {
    validate_syntax(path)?;
    if path != "data" && !path.starts_with("data.") {
        return Err(KindError::NotExtensible(path.to_string()));
    }
    let mut reg = registry().write().expect("kind registry poisoned");
    let mut prefix = String::new();
    for segment in path.split('.') {
        if !prefix.is_empty() {
            prefix.push('.');
        }
        prefix.push_str(segment);
        reg.insert(prefix.clone());
    }
    Ok(NodeKind(path.to_string()))
}

/// All kinds currently known, sorted.
pub fn registered_kinds() -> Vec<NodeKind> {
    let reg = registry().read().expect("kind registry poisoned");
    reg.iter().cloned().map(NodeKind).collect()
}

fn validate_syntax(path: &str) -> Result<(), KindError> {
    let ok = !path.is_empty()
        && path.split('.').all(|seg| {
            !seg.is_empty() && seg.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        });
    if ok {
        Ok(())
    } else {
        Err(KindError::Malformed(path.to_string()))
    }
}

/// A registered, hierarchical node kind.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeKind(String);

impl NodeKind {
    pub const DATA: &'static str = "data";
    pub const INT: &'static str = "data.int";
    pub const FLOAT: &'static str = "data.float";
    pub const BOOL: &'static str = "data.bool";
    pub const STR: &'static str = "data.str";
    pub const LIST: &'static str = "data.list";
    pub const DICT: &'static str = "data.dict";
    pub const CODE: &'static str = "data.code";
    pub const REMOTE: &'static str = "data.remote";
    pub const FOLDER: &'static str = "data.folder";
    pub const PROCESS: &'static str = "process";
    pub const CALCULATION: &'static str = "process.calculation";
    pub const CALCJOB: &'static str = "process.calculation.calcjob";
    pub const CALCFUNCTION: &'static str = "process.calculation.calcfunction";
    pub const WORKFLOW: &'static str = "process.workflow";
    pub const WORKCHAIN: &'static str = "process.workflow.workchain";
    pub const WORKFUNCTION: &'static str = "process.workflow.workfunction";

    /// Looks up a registered kind.
    pub fn new(path: &str) -> Result<Self, KindError> {
        validate_syntax(path)?;
        let reg = registry().read().expect("kind registry poisoned");
        if reg.contains(path) {
            Ok(NodeKind(path.to_string()))
        } else {
            Err(KindError::Unknown(path.to_string()))
        }
    }

    /// Shorthand for built-in kinds; panics on an unregistered path.
    pub fn builtin(path: &str) -> Self {
        Self::new(path).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Prefix containment on the dotted path, inclusive.
    pub fn is_a(&self, ancestor: &NodeKind) -> bool {
        let (me, other) = (self.0.as_str(), ancestor.0.as_str());
        me == other || (me.len() > other.len() && me.starts_with(other) && me.as_bytes()[other.len()] == b'.')
    }

    pub fn is_data(&self) -> bool {
        self.0 == Self::DATA || self.0.starts_with("data.")
    }

    pub fn is_process(&self) -> bool {
        self.0 == Self::PROCESS || self.0.starts_with("process.")
    }

    pub fn is_calculation(&self) -> bool {
        self.0 == Self::CALCULATION || self.0.starts_with("process.calculation.")
    }

    pub fn is_workflow(&self) -> bool {
        self.0 == Self::WORKFLOW || self.0.starts_with("process.workflow.")
    }

    pub fn parent(&self) -> Option<NodeKind> {
        self.0.rfind('.').map(|i| NodeKind(self.0[..i].to_string()))
    }
}

/// `is_a` over raw paths; both must be registered.
pub fn is_a(kind: &str, ancestor: &str) -> Result<bool, KindError> {
    Ok(NodeKind::new(kind)?.is_a(&NodeKind::new(ancestor)?))
}

impl TryFrom<String> for NodeKind {
    type Error = KindError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        NodeKind::new(&value)
    }
}

impl From<NodeKind> for String {
    fn from(k: NodeKind) -> String {
        k.0
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeKind({})", self.0)
    }
}
