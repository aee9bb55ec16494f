//! Provenance graph vertices.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::attrs::{self, Document};
use crate::error::{Error, Result};
use crate::kind::NodeKind;

/// One file in a node's repository. Content is held in memory until the
/// node is stored; loaded nodes carry the digest only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoFile {
    pub sha256: String,
    pub size: u64,
    #[serde(skip)]
    pub content: Option<Vec<u8>>,
}

impl RepoFile {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        RepoFile { sha256: sha256_hex(&bytes), size: bytes.len() as u64, content: Some(bytes) }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub(crate) id: Option<i64>,
    pub(crate) uuid: Uuid,
    pub(crate) kind: NodeKind,
    pub(crate) label: String,
    pub(crate) description: String,
    pub(crate) ctime: Option<DateTime<Utc>>,
    pub(crate) mtime: Option<DateTime<Utc>>,
    pub(crate) computer: Option<String>,
    pub(crate) attributes: Document,
    pub(crate) extras: Document,
    pub(crate) files: BTreeMap<String, RepoFile>,
    pub(crate) hash: Option<String>,
}

impl Node {
    pub fn new(kind: NodeKind) -> Self {
        Node {
            id: None,
            uuid: Uuid::new_v4(),
            kind,
            label: String::new(),
            description: String::new(),
            ctime: None,
            mtime: None,
            computer: None,
            attributes: Document::new(),
            extras: Document::new(),
            files: BTreeMap::new(),
            hash: None,
        }
    }

    fn scalar(kind: &str, value: Value) -> Self {
        let mut n = Node::new(NodeKind::builtin(kind));
        n.attributes.insert("value".into(), value);
        n
    }

    pub fn int(v: i64) -> Self {
        Self::scalar(NodeKind::INT, json!(v))
    }

    pub fn float(v: f64) -> Self {
        Self::scalar(NodeKind::FLOAT, json!(v))
    }

    pub fn bool(v: bool) -> Self {
        Self::scalar(NodeKind::BOOL, json!(v))
    }

    pub fn str(v: impl Into<String>) -> Self {
        Self::scalar(NodeKind::STR, Value::String(v.into()))
    }

    pub fn list(items: Vec<Value>) -> Self {
        Self::scalar(NodeKind::LIST, Value::Array(items))
    }

    /// A dictionary node; its keys are the node's attributes.
    pub fn dict(doc: Value) -> Result<Self> {
        let map = match doc {
            Value::Object(m) => m,
            _ => return Err(crate::error::AttrError::NotAMap.into()),
        };
        let mut n = Node::new(NodeKind::builtin(NodeKind::DICT));
        n.attributes = map;
        Ok(n)
    }

    /// A code: an executable on a computer.
    pub fn code(label: &str, computer: &str, executable: &str) -> Self {
        let mut n = Node::new(NodeKind::builtin(NodeKind::CODE));
        n.label = label.to_string();
        n.computer = Some(computer.to_string());
        n.attributes.insert("executable".into(), json!(executable));
        n
    }

    pub fn id(&self) -> Option<i64> {
        self.id
    }

    pub fn uuid(&self) -> Uuid {
        self.uuid
    }

    pub fn kind(&self) -> &NodeKind {
        &self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn ctime(&self) -> Option<DateTime<Utc>> {
        self.ctime
    }

    pub fn mtime(&self) -> Option<DateTime<Utc>> {
        self.mtime
    }

    pub fn computer(&self) -> Option<&str> {
        self.computer.as_deref()
    }

    pub fn attributes(&self) -> &Document {
        &self.attributes
    }

    pub fn extras(&self) -> &Document {
        &self.extras
    }

    pub fn files(&self) -> &BTreeMap<String, RepoFile> {
        &self.files
    }

    pub fn hash(&self) -> Option<&str> {
        self.hash.as_deref()
    }

    pub fn is_stored(&self) -> bool {
        self.id.is_some()
    }

    pub fn attribute(&self, path: &str) -> Option<&Value> {
        attrs::get_path(&self.attributes, path)
    }

    /// The `value` attribute of scalar data nodes.
    pub fn value(&self) -> Option<&Value> {
        self.attributes.get("value")
    }

    pub fn as_i64(&self) -> Option<i64> {
        self.value().and_then(Value::as_i64)
    }

    pub fn as_f64(&self) -> Option<f64> {
        self.value().and_then(Value::as_f64)
    }

    fn ensure_mutable(&self, what: &str) -> Result<()> {
        if self.is_stored() {
            Err(Error::Immutable(format!("{what} of stored node {}", self.uuid)))
        } else {
            Ok(())
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_computer(mut self, computer: impl Into<String>) -> Self {
        self.computer = Some(computer.into());
        self
    }

    /// Pins the uuid; used by archive import and tests.
    pub fn with_uuid(mut self, uuid: Uuid) -> Self {
        self.uuid = uuid;
        self
    }

    pub fn set_label(&mut self, label: impl Into<String>) -> Result<()> {
        self.ensure_mutable("label")?;
        self.label = label.into();
        Ok(())
    }

    pub fn set_attribute(&mut self, path: &str, value: Value) -> Result<()> {
        self.ensure_mutable("attributes")?;
        attrs::set_path(&mut self.attributes, path, value)?;
        Ok(())
    }

    pub fn delete_attribute(&mut self, path: &str) -> Result<()> {
        self.ensure_mutable("attributes")?;
        attrs::delete_path(&mut self.attributes, path)?;
        Ok(())
    }

    /// Extras of an unstored node; stored nodes go through the store.
    pub fn set_extra(&mut self, path: &str, value: Value) -> Result<()> {
        self.ensure_mutable("extras (use the store for stored nodes)")?;
        attrs::set_path(&mut self.extras, path, value)?;
        Ok(())
    }

    pub fn put_file(&mut self, path: &str, content: impl Into<Vec<u8>>) -> Result<()> {
        self.ensure_mutable("repository")?;
        validate_repo_path(path)?;
        self.files.insert(path.to_string(), RepoFile::from_bytes(content.into()));
        Ok(())
    }

    /// Copy with fresh identity and the same content; used when cloning cached outputs.
    pub fn clone_unstored(&self) -> Result<Node> {
        let mut n = Node::new(self.kind.clone());
        n.label = self.label.clone();
        n.description = self.description.clone();
        n.computer = self.computer.clone();
        n.attributes = self.attributes.clone();
        for (path, f) in &self.files {
            let content = f
                .content
                .clone()
                .ok_or_else(|| Error::NotFound(format!("file content for `{path}` not loaded")))?;
            n.files.insert(path.clone(), RepoFile::from_bytes(content));
        }
        Ok(n)
    }

    /// Structured summary used by the REST API and the CLI.
    pub fn summary(&self) -> Value {
        json!({
            "id": self.id,
            "uuid": self.uuid.to_string(),
            "kind": self.kind.as_str(),
            "label": self.label,
            "description": self.description,
            "ctime": self.ctime.map(|t| t.to_rfc3339()),
            "mtime": self.mtime.map(|t| t.to_rfc3339()),
            "computer": self.computer,
            "hash": self.hash,
        })
    }
}

pub(crate) fn validate_repo_path(path: &str) -> Result<()> {
    let bad = path.is_empty()
        || path.starts_with('/')
        || path.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..");
    if bad {
        Err(Error::InvalidPath(path.to_string()))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unstored_nodes_are_mutable() {
        let mut n = Node::int(5);
        n.set_attribute("value", json!(6)).unwrap();
        n.put_file("aiida.in", b"echo 1".to_vec()).unwrap();
        assert_eq!(n.as_i64(), Some(6));
        assert_eq!(n.files()["aiida.in"].size, 6);
    }

    #[test]
    fn stored_nodes_reject_content_mutation() {
        let mut n = Node::int(5);
        n.id = Some(1);
        assert!(matches!(n.set_attribute("value", json!(1)), Err(Error::Immutable(_))));
        assert!(matches!(n.put_file("x", vec![]), Err(Error::Immutable(_))));
    }

    #[test]
    fn repo_paths_are_relative() {
        let mut n = Node::int(1);
        assert!(n.put_file("../x", vec![]).is_err());
        assert!(n.put_file("/x", vec![]).is_err());
        assert!(n.put_file("a//b", vec![]).is_err());
        assert!(n.put_file("out/aiida.out", vec![]).is_ok());
    }

    #[test]
    fn dict_keys_become_attributes() {
        let n = Node::dict(json!({"type": "relax", "threshold": 0.1})).unwrap();
        assert_eq!(n.attribute("type"), Some(&json!("relax")));
        assert!(Node::dict(json!(3)).is_err());
    }
}
