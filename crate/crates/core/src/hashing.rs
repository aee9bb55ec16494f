//! Content hashing of nodes.
//!
//! A node hash is a BLAKE2b-256 digest over a canonical document holding the
//! kind path, the attributes (minus excluded keys), the repository file
//! digests and, for calculations, the sorted (input label, input hash) pairs.
//! Extras, uuid, ids and timestamps never enter the digest.

use std::collections::BTreeMap;
use std::fmt;

use blake2::digest::consts::U32;
use blake2::{Blake2b, Digest};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attrs::{canonical_json, Document};
use crate::kind::NodeKind;
use crate::node::RepoFile;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeHash(String);

impl NodeHash {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for NodeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Attribute keys left out of the digest, per kind prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashConfig {
    pub excluded: BTreeMap<String, Vec<String>>,
}

impl Default for HashConfig {
    fn default() -> Self {
        let mut excluded = BTreeMap::new();
        excluded.insert(NodeKind::PROCESS.to_string(), vec!["version".to_string()]);
        HashConfig { excluded }
    }
}

impl HashConfig {
    pub fn excluded_for(&self, kind: &NodeKind) -> Vec<&str> {
        self.excluded
            .iter()
            .filter(|(prefix, _)| NodeKind::new(prefix).map(|p| kind.is_a(&p)).unwrap_or(false))
            .flat_map(|(_, keys)| keys.iter().map(String::as_str))
            .collect()
    }
}

/// Pure digest of node content. `inputs` is `Some` for calculation nodes.
pub fn hash_content(
    kind: &NodeKind,
    attributes: &Document,
    files: &BTreeMap<String, RepoFile>,
    inputs: Option<&[(String, String)]>,
    config: &HashConfig,
) -> NodeHash {
    let excluded = config.excluded_for(kind);
    let attributes: Document = attributes
        .iter()
        .filter(|(k, _)| !excluded.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let files: Vec<Value> = files.iter().map(|(p, f)| json!([p, f.sha256])).collect();
    let mut doc = json!({
        "kind": kind.as_str(),
        "attributes": Value::Object(attributes),
        "repository": files,
    });
    if let Some(inputs) = inputs {
        let mut pairs: Vec<&(String, String)> = inputs.iter().collect();
        pairs.sort();
        doc["inputs"] = pairs.into_iter().map(|(l, h)| json!([l, h])).collect();
    }
    let mut hasher = Blake2b::<U32>::new();
    hasher.update(canonical_json(&doc).as_bytes());
    NodeHash(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Node;

    fn h(n: &Node, inputs: Option<&[(String, String)]>) -> NodeHash {
        hash_content(n.kind(), n.attributes(), n.files(), inputs, &HashConfig::default())
    }

    #[test]
    fn equal_content_equal_hash() {
        assert_eq!(h(&Node::int(5), None), h(&Node::int(5), None));
        assert_ne!(h(&Node::int(5), None), h(&Node::int(6), None));
        assert_ne!(h(&Node::int(5), None), h(&Node::float(5.0), None));
        assert_eq!(h(&Node::int(5), None).as_str().len(), 64);
    }

    #[test]
    fn extras_and_labels_do_not_matter() {
        let mut a = Node::int(5).with_label("a");
        a.set_extra("tag", json!("x")).unwrap();
        assert_eq!(h(&a, None), h(&Node::int(5), None));
    }

    #[test]
    fn version_excluded_for_processes_only() {
        let kind = NodeKind::builtin(NodeKind::CALCFUNCTION);
        let mut a = Node::new(kind.clone());
        a.set_attribute("version", json!({"core": "1"})).unwrap();
        let mut b = Node::new(kind);
        b.set_attribute("version", json!({"core": "2"})).unwrap();
        assert_eq!(h(&a, Some(&[])), h(&b, Some(&[])));

        let mut d = Node::dict(json!({"version": 1})).unwrap();
        let e = Node::dict(json!({"version": 2})).unwrap();
        assert_ne!(h(&d, None), h(&e, None));
        d.put_file("f", b"x".to_vec()).unwrap();
        assert_ne!(h(&d, None), h(&Node::dict(json!({"version": 1})).unwrap(), None));
    }

    #[test]
    fn input_order_is_irrelevant_but_content_is_not() {
        let c = Node::new(NodeKind::builtin(NodeKind::CALCFUNCTION));
        let i1 = vec![("x".to_string(), "aa".to_string()), ("y".to_string(), "bb".to_string())];
        let i2 = vec![("y".to_string(), "bb".to_string()), ("x".to_string(), "aa".to_string())];
        let i3 = vec![("x".to_string(), "aa".to_string()), ("y".to_string(), "cc".to_string())];
        assert_eq!(h(&c, Some(&i1)), h(&c, Some(&i2)));
        assert_ne!(h(&c, Some(&i1)), h(&c, Some(&i3)));
    }
}
