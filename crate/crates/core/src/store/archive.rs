//! Single-file archive exchange between stores.
//!
//! The archive is one JSON document: a manifest of node records (sorted by
//! uuid), links (sorted by source, target, type, label) and repository
//! payloads keyed by digest. Equal graphs export to identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use base64::Engine as _;
use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use super::{Store, Tx};
use crate::attrs::{canonical_json, Document};
use crate::error::{Error, Result};
use crate::graph::{Link, LinkLabel, LinkType};
use crate::kind::NodeKind;
use crate::node::sha256_hex;

pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveFile {
    path: String,
    sha256: String,
    size: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveProcess {
    process_type: String,
    state: String,
    exit_code: Option<i64>,
    exception: Option<String>,
    caller: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveNode {
    uuid: Uuid,
    kind: String,
    label: String,
    description: String,
    ctime: String,
    mtime: String,
    computer: Option<String>,
    attributes: Document,
    extras: Document,
    hash: Option<String>,
    files: Vec<ArchiveFile>,
    process: Option<ArchiveProcess>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct ArchiveLink {
    source: Uuid,
    target: Uuid,
    #[serde(rename = "type")]
    link_type: String,
    label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Archive {
    format_version: u32,
    nodes: Vec<ArchiveNode>,
    links: Vec<ArchiveLink>,
    blobs: BTreeMap<String, String>,
}

/// What an import changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ArchiveSummary {
    pub nodes_added: usize,
    pub nodes_skipped: usize,
    pub links_added: usize,
    pub links_skipped: usize,
}

impl Tx<'_> {
    fn export_document(&self) -> Result<Archive> {
        let mut nodes = Vec::new();
        let mut blobs = BTreeMap::new();
        let mut stmt = self.conn.prepare(
            "SELECT n.id, n.uuid, n.ctime, n.mtime, p.process_type, p.state, p.exit_code, p.exception, p.caller
             FROM nodes n LEFT JOIN processes p ON p.node_id = n.id",
        )?;
        type Row = (i64, String, String, String, Option<String>, Option<String>, Option<i64>, Option<String>, Option<String>);
        let rows: Vec<Row> = stmt
            .query_map([], |r| {
                Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?, r.get(6)?, r.get(7)?, r.get(8)?))
            })?
            .collect::<rusqlite::Result<_>>()?;
        for (id, _uuid, ctime, mtime, ptype, state, exit_code, exception, caller) in rows {
            let node = self.get_node_by_id(id)?;
            let mut files = Vec::new();
            for (path, f) in node.files() {
                if !blobs.contains_key(&f.sha256) {
                    let bytes = self.blob(&f.sha256)?;
                    blobs.insert(f.sha256.clone(), base64::engine::general_purpose::STANDARD.encode(bytes));
                }
                files.push(ArchiveFile { path: path.clone(), sha256: f.sha256.clone(), size: f.size });
            }
            let process = match (ptype, state) {
                (Some(process_type), Some(state)) => Some(ArchiveProcess { process_type, state, exit_code, exception, caller }),
                _ => None,
            };
            nodes.push(ArchiveNode {
                uuid: node.uuid(),
                kind: node.kind().as_str().to_string(),
                label: node.label().to_string(),
                description: node.description().to_string(),
                ctime,
                mtime,
                computer: node.computer().map(str::to_string),
                attributes: node.attributes().clone(),
                extras: node.extras().clone(),
                hash: node.hash().map(str::to_string),
                files,
                process,
            });
        }
        nodes.sort_by_key(|n| n.uuid);
        let mut links: Vec<ArchiveLink> = self
            .all_links()?
            .into_iter()
            .map(|r| ArchiveLink {
                source: r.link.source,
                target: r.link.target,
                link_type: r.link.link_type.as_str().to_string(),
                label: r.link.label.to_string(),
            })
            .collect();
        links.sort();
        Ok(Archive { format_version: ARCHIVE_FORMAT_VERSION, nodes, links, blobs })
    }

    /// Serializes the whole graph to canonical archive bytes.
    pub fn export_archive(&self) -> Result<Vec<u8>> {
        let doc = serde_json::to_value(self.export_document()?)?;
        Ok(canonical_json(&doc).into_bytes())
    }

    /// Merges an archive into this store. Nodes whose uuid already exists
    /// are kept as-is; identical links are skipped; every new link goes
    /// through normal validation.
    pub fn import_archive(&self, bytes: &[u8]) -> Result<ArchiveSummary> {
        let archive: Archive = serde_json::from_slice(bytes)?;
        if archive.format_version != ARCHIVE_FORMAT_VERSION {
            return Err(Error::Archive(format!("unsupported archive format version {}", archive.format_version)));
        }
        let mut summary = ArchiveSummary::default();
        for (sha, payload) in &archive.blobs {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(payload)
                .map_err(|e| Error::Archive(format!("blob {sha}: {e}")))?;
            if sha256_hex(&bytes) != *sha {
                return Err(Error::Archive(format!("blob {sha} does not match its digest")));
            }
            self.put_blob(&bytes)?;
        }
        let mut imported = BTreeSet::new();
        let mut by_id: Vec<&ArchiveNode> = archive.nodes.iter().collect();
        // Preserve the exporter's relative creation order for the new ids.
        by_id.sort_by(|a, b| (&a.ctime, a.uuid).cmp(&(&b.ctime, b.uuid)));
        for n in by_id {
            if self.node_id(n.uuid)?.is_some() {
                summary.nodes_skipped += 1;
                continue;
            }
            NodeKind::new(&n.kind)?;
            for f in &n.files {
                if !archive.blobs.contains_key(&f.sha256) {
                    return Err(Error::Archive(format!("missing payload for `{}` of {}", f.path, n.uuid)));
                }
            }
            self.conn.execute(
                "INSERT INTO nodes(uuid, kind, label, description, ctime, mtime, computer, attributes, extras, hash)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
                params![
                    n.uuid.to_string(),
                    n.kind,
                    n.label,
                    n.description,
                    n.ctime,
                    n.mtime,
                    n.computer,
                    canonical_json(&Value::Object(n.attributes.clone())),
                    canonical_json(&Value::Object(n.extras.clone())),
                    n.hash,
                ],
            )?;
            let id = self.conn.last_insert_rowid();
            for f in &n.files {
                self.conn.execute(
                    "INSERT INTO repo_files(node_id, path, sha256, size) VALUES (?1, ?2, ?3, ?4)",
                    params![id, f.path, f.sha256, f.size as i64],
                )?;
            }
            if let Some(p) = &n.process {
                self.conn.execute(
                    "INSERT INTO processes(node_id, uuid, process_type, state, exit_code, exception, caller, updated_at)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                    params![id, n.uuid.to_string(), p.process_type, p.state, p.exit_code, p.exception, p.caller, super::unix_now()],
                )?;
            }
            imported.insert(n.uuid);
            summary.nodes_added += 1;
        }
        for l in &archive.links {
            let link_type: LinkType = l.link_type.parse().map_err(Error::Archive)?;
            let exists: Option<i64> = self
                .conn
                .query_row(
                    "SELECT l.id FROM links l JOIN nodes s ON s.id = l.source JOIN nodes t ON t.id = l.target
                     WHERE s.uuid = ?1 AND t.uuid = ?2 AND l.type = ?3 AND l.label = ?4",
                    params![l.source.to_string(), l.target.to_string(), l.link_type, l.label],
                    |r| r.get(0),
                )
                .optional()?;
            if exists.is_some() {
                summary.links_skipped += 1;
                continue;
            }
            let label = LinkLabel::new(&l.label).map_err(|v| Error::Archive(v.to_string()))?;
            self.insert_link(&Link { source: l.source, target: l.target, link_type, label })?;
            summary.links_added += 1;
        }
        Ok(summary)
    }
}

impl Store {
    pub fn export_archive(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.read(|tx| tx.export_archive())?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn import_archive(&self, path: impl AsRef<Path>) -> Result<ArchiveSummary> {
        let bytes = std::fs::read(path)?;
        self.write(|tx| tx.import_archive(&bytes))
    }
}
