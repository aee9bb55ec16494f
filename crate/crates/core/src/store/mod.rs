//! Durable, transactional persistence of nodes, links, repository files and
//! checkpoints.
//!
//! A store is a directory holding a single SQLite database (`store.sqlite`)
//! and a content-addressed file directory (`repo/`). Several OS processes
//! may open the same store; every mutation runs in an `IMMEDIATE`
//! transaction so validate-then-insert is atomic. Repository blobs are
//! written before the owning transaction commits, so a committed node always
//! has its files.

mod archive;
mod schema;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

pub use archive::{ArchiveSummary, ARCHIVE_FORMAT_VERSION};

use crate::attrs::{self, Document};
use crate::error::{Error, Result};
use crate::graph::{self, GraphView, Link, LinkLabel, LinkType, ViewError};
use crate::hashing::{hash_content, HashConfig, NodeHash};
use crate::kind::NodeKind;
use crate::node::{sha256_hex, validate_repo_path, Node, RepoFile};

/// How ancestor/descendant reachability is answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcMode {
    /// Computed per query by frontier expansion.
    Otf,
    /// Materialized table maintained on every link insertion.
    Table,
}

impl FromStr for TcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "otf" => Ok(TcMode::Otf),
            "table" => Ok(TcMode::Table),
            other => Err(format!("unknown transitive-closure strategy `{other}`")),
        }
    }
}

impl TcMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TcMode::Otf => "otf",
            TcMode::Table => "table",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub attribute_cap: usize,
    pub hash: HashConfig,
    pub busy_timeout: Duration,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            attribute_cap: attrs::DEFAULT_ATTRIBUTE_CAP,
            hash: HashConfig::default(),
            busy_timeout: Duration::from_secs(60),
        }
    }
}

/// A link as stored, with its row id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub id: i64,
    #[serde(flatten)]
    pub link: Link,
}

/// One row of the materialized transitive closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TcRow {
    pub ancestor: i64,
    pub descendant: i64,
    pub depth: i64,
}

pub struct Store {
    conn: Connection,
    root: PathBuf,
    config: StoreConfig,
    tc_mode: TcMode,
}

pub(crate) fn now_ts() -> DateTime<Utc> {
    Utc::now()
}

pub(crate) fn fmt_ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::Archive(format!("bad timestamp `{s}`: {e}")))
}

/// Seconds since the epoch; shared clock across worker processes.
pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("clock after epoch")
        .as_secs_f64()
}

impl Store {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Store> {
        Self::open_with(root, StoreConfig::default())
    }

    pub fn open_with(root: impl AsRef<Path>, config: StoreConfig) -> Result<Store> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("repo"))?;
        let conn = Connection::open(root.join("store.sqlite"))?;
        conn.busy_timeout(config.busy_timeout)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        {
            let tx = rusqlite::Transaction::new_unchecked(&conn, TransactionBehavior::Immediate)?;
            tx.execute_batch(schema::SCHEMA)?;
            tx.execute(
                "INSERT OR IGNORE INTO meta(key, value) VALUES ('schema_version', ?1)",
                params![schema::SCHEMA_VERSION.to_string()],
            )?;
            tx.execute("INSERT OR IGNORE INTO meta(key, value) VALUES ('tc_mode', 'otf')", [])?;
            tx.commit()?;
        }
        let mode: String = conn.query_row("SELECT value FROM meta WHERE key = 'tc_mode'", [], |r| r.get(0))?;
        let tc_mode = mode.parse().map_err(Error::Config)?;
        // Data kinds registered by whoever wrote the store.
        {
            let mut stmt = conn.prepare("SELECT DISTINCT kind FROM nodes WHERE kind LIKE 'data.%'")?;
            let kinds: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
            for k in kinds {
                crate::kind::register_data_kind(&k)?;
            }
        }
        Ok(Store { conn, root, config, tc_mode })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn tc_mode(&self) -> TcMode {
        self.tc_mode
    }

    /// Switches the closure strategy. Enabling `table` rebuilds the table from
    /// the current links; switching to `otf` drops it.
    pub fn set_tc_mode(&mut self, mode: TcMode) -> Result<()> {
        self.refresh_tc_mode()?;
        if mode == self.tc_mode {
            return Ok(());
        }
        self.tc_mode = mode;
        self.write(|tx| {
            tx.conn.execute("UPDATE meta SET value = ?1 WHERE key = 'tc_mode'", params![mode.as_str()])?;
            match mode {
                TcMode::Table => tx.rebuild_tc(),
                TcMode::Otf => {
                    tx.conn.execute("DELETE FROM tc", [])?;
                    Ok(())
                }
            }
        })
    }

    /// Re-reads the persisted mode; another process may have changed it.
    pub fn refresh_tc_mode(&mut self) -> Result<TcMode> {
        let mode: String = self.conn.query_row("SELECT value FROM meta WHERE key = 'tc_mode'", [], |r| r.get(0))?;
        self.tc_mode = mode.parse().map_err(Error::Config)?;
        Ok(self.tc_mode)
    }

    /// Runs `f` in a serializable write transaction.
    pub fn write<T>(&self, f: impl FnOnce(&Tx<'_>) -> Result<T>) -> Result<T> {
        let txn = rusqlite::Transaction::new_unchecked(&self.conn, TransactionBehavior::Immediate)?;
        let out = f(&Tx { conn: &txn, store: self })?;
        txn.commit()?;
        Ok(out)
    }

    /// Runs `f` against a consistent read snapshot.
    pub fn read<T>(&self, f: impl FnOnce(&Tx<'_>) -> Result<T>) -> Result<T> {
        let txn = rusqlite::Transaction::new_unchecked(&self.conn, TransactionBehavior::Deferred)?;
        let out = f(&Tx { conn: &txn, store: self })?;
        txn.commit()?;
        Ok(out)
    }

    pub fn store_node(&self, node: &mut Node) -> Result<()> {
        self.write(|tx| tx.store_node(node))
    }

    pub fn get_node(&self, uuid: Uuid) -> Result<Node> {
        self.read(|tx| tx.get_node(uuid))
    }

    pub fn insert_link(&self, link: &Link) -> Result<i64> {
        self.write(|tx| tx.insert_link(link))
    }

    pub fn set_extra(&self, uuid: Uuid, path: &str, value: Value) -> Result<()> {
        self.write(|tx| tx.set_extra(uuid, path, value))
    }

    pub fn delete_extra(&self, uuid: Uuid, path: &str) -> Result<()> {
        self.write(|tx| tx.delete_extra(uuid, path))
    }

    pub fn save_checkpoint(&self, process: Uuid, data: &[u8]) -> Result<i64> {
        self.write(|tx| tx.save_checkpoint(process, data))
    }

    pub fn load_checkpoint(&self, process: Uuid) -> Result<Vec<u8>> {
        self.read(|tx| tx.load_checkpoint(process))
    }

    pub fn read_file(&self, uuid: Uuid, path: &str) -> Result<Vec<u8>> {
        self.read(|tx| tx.read_file(uuid, path))
    }

    fn blob_path(&self, sha: &str) -> PathBuf {
        self.root.join("repo").join(&sha[..2]).join(&sha[2..])
    }

    fn write_blob(&self, sha: &str, content: &[u8]) -> Result<()> {
        let path = self.blob_path(sha);
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", &sha[2..], Uuid::new_v4().simple()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn read_blob(&self, sha: &str) -> Result<Vec<u8>> {
        fs::read(self.blob_path(sha)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("repository blob {sha}")),
            _ => e.into(),
        })
    }
}

/// A transaction over the store. All graph mutations go through here.
pub struct Tx<'a> {
    conn: &'a Connection,
    store: &'a Store,
}

fn row_to_node(row: &rusqlite::Row<'_>) -> rusqlite::Result<(i64, String, String, String, String, String, String, Option<String>, String, String, Option<String>)> {
    Ok((
        row.get(0)?,
        row.get(1)?,
        row.get(2)?,
        row.get(3)?,
        row.get(4)?,
        row.get(5)?,
        row.get(6)?,
        row.get(7)?,
        row.get(8)?,
        row.get(9)?,
        row.get(10)?,
    ))
}

const NODE_COLUMNS: &str = "id, uuid, kind, label, description, ctime, mtime, computer, attributes, extras, hash";

fn parse_doc(text: &str) -> Result<Document> {
    match serde_json::from_str::<Value>(text)? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Archive("document column is not a map".into())),
    }
}

fn parse_uuid(s: &str) -> Result<Uuid> {
    Uuid::parse_str(s).map_err(|e| Error::Archive(format!("bad uuid `{s}`: {e}")))
}

impl<'a> Tx<'a> {
    pub(crate) fn conn(&self) -> &Connection {
        self.conn
    }

    pub fn store(&self) -> &Store {
        self.store
    }

    pub fn tc_mode(&self) -> TcMode {
        self.store.tc_mode
    }

    /// Persists an unstored node with its repository files. Data nodes get
    /// their hash immediately; calculation hashes are finalized by
    /// [`Tx::refresh_hash`] once their inputs are linked.
    pub fn store_node(&self, node: &mut Node) -> Result<()> {
        if node.is_stored() {
            return Err(Error::AlreadyStored(node.uuid));
        }
        attrs::validate(&node.attributes)?;
        attrs::validate(&node.extras)?;
        let attributes = attrs::check_size(&node.attributes, self.store.config.attribute_cap)?;
        let extras = attrs::canonical_json(&Value::Object(node.extras.clone()));
        if self.node_id(node.uuid)?.is_some() {
            return Err(Error::DuplicateUuid(node.uuid));
        }
        for (path, file) in &node.files {
            validate_repo_path(path)?;
            let content = file
                .content
                .as_ref()
                .ok_or_else(|| Error::NotFound(format!("content of `{path}` on unstored node")))?;
            self.store.write_blob(&file.sha256, content)?;
        }
        let hash = if node.kind.is_calculation() {
            hash_content(&node.kind, &node.attributes, &node.files, Some(&[]), &self.store.config.hash)
        } else {
            hash_content(&node.kind, &node.attributes, &node.files, None, &self.store.config.hash)
        };
        let now = now_ts();
        let ts = fmt_ts(now);
        self.conn
            .prepare_cached(
                "INSERT INTO nodes(uuid, kind, label, description, ctime, mtime, computer, attributes, extras, hash)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?5, ?6, ?7, ?8, ?9)",
            )?
            .execute(params![
                node.uuid.to_string(),
                node.kind.as_str(),
                node.label,
                node.description,
                ts,
                node.computer,
                attributes,
                extras,
                hash.as_str(),
            ])?;
        let id = self.conn.last_insert_rowid();
        for (path, file) in &node.files {
            self.conn
                .prepare_cached("INSERT INTO repo_files(node_id, path, sha256, size) VALUES (?1, ?2, ?3, ?4)")?
                .execute(params![id, path, file.sha256, file.size as i64])?;
        }
        node.id = Some(id);
        node.ctime = Some(now);
        node.mtime = Some(now);
        node.hash = Some(hash.into_string());
        Ok(())
    }

    /// Recomputes a calculation's hash from its content and linked inputs.
    pub fn refresh_hash(&self, uuid: Uuid) -> Result<NodeHash> {
        let node = self.get_node(uuid)?;
        let inputs = if node.kind.is_calculation() {
            let mut pairs = Vec::new();
            for l in self.links_into(uuid)? {
                if l.link.link_type.is_input() {
                    let h = self.node_hash(l.link.source)?.unwrap_or_default();
                    pairs.push((l.link.label.to_string(), h));
                }
            }
            Some(pairs)
        } else {
            None
        };
        let hash = hash_content(&node.kind, &node.attributes, &node.files, inputs.as_deref(), &self.store.config.hash);
        self.conn.execute("UPDATE nodes SET hash = ?1 WHERE uuid = ?2", params![hash.as_str(), uuid.to_string()])?;
        Ok(hash)
    }

    pub fn node_hash(&self, uuid: Uuid) -> Result<Option<String>> {
        self.conn
            .prepare_cached("SELECT hash FROM nodes WHERE uuid = ?1")?
            .query_row(params![uuid.to_string()], |r| r.get::<_, Option<String>>(0))
            .optional()?
            .ok_or_else(|| Error::NotFound(format!("node {uuid}")))
    }

    pub fn node_id(&self, uuid: Uuid) -> Result<Option<i64>> {
        Ok(self
            .conn
            .prepare_cached("SELECT id FROM nodes WHERE uuid = ?1")?
            .query_row(params![uuid.to_string()], |r| r.get(0))
            .optional()?)
    }

    pub fn require_node_id(&self, uuid: Uuid) -> Result<i64> {
        self.node_id(uuid)?.ok_or_else(|| Error::NotFound(format!("node {uuid}")))
    }

    pub fn node_uuid(&self, id: i64) -> Result<Uuid> {
        let s: Option<String> =
            self.conn.prepare_cached("SELECT uuid FROM nodes WHERE id = ?1")?.query_row(params![id], |r| r.get(0)).optional()?;
        parse_uuid(&s.ok_or_else(|| Error::NotFound(format!("node id {id}")))?)
    }

    pub fn node_kind(&self, uuid: Uuid) -> Result<Option<NodeKind>> {
        let s: Option<String> = self
            .conn
            .prepare_cached("SELECT kind FROM nodes WHERE uuid = ?1")?
            .query_row(params![uuid.to_string()], |r| r.get(0))
            .optional()?;
        s.map(|k| NodeKind::new(&k).map_err(Error::from)).transpose()
    }

    fn build_node(&self, raw: (i64, String, String, String, String, String, String, Option<String>, String, String, Option<String>)) -> Result<Node> {
        let (id, uuid, kind, label, description, ctime, mtime, computer, attributes, extras, hash) = raw;
        let mut files = BTreeMap::new();
        let mut stmt = self.conn.prepare_cached("SELECT path, sha256, size FROM repo_files WHERE node_id = ?1 ORDER BY path")?;
        let rows = stmt.query_map(params![id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, i64>(2)?)))?;
        for row in rows {
            let (path, sha256, size) = row?;
            files.insert(path, RepoFile { sha256, size: size as u64, content: None });
        }
        Ok(Node {
            id: Some(id),
            uuid: parse_uuid(&uuid)?,
            kind: NodeKind::new(&kind)?,
            label,
            description,
            ctime: Some(parse_ts(&ctime)?),
            mtime: Some(parse_ts(&mtime)?),
            computer,
            attributes: parse_doc(&attributes)?,
            extras: parse_doc(&extras)?,
            files,
            hash,
        })
    }

    pub fn get_node(&self, uuid: Uuid) -> Result<Node> {
        let raw = self
            .conn
            .prepare_cached(&format!("SELECT {NODE_COLUMNS} FROM nodes WHERE uuid = ?1"))?
            .query_row(params![uuid.to_string()], row_to_node)
            .optional()?
            .ok_or_else(|| Error::NotFound(format!("node {uuid}")))?;
        self.build_node(raw)
    }

    pub fn get_node_by_id(&self, id: i64) -> Result<Node> {
        let raw = self
            .conn
            .prepare_cached(&format!("SELECT {NODE_COLUMNS} FROM nodes WHERE id = ?1"))?
            .query_row(params![id], row_to_node)
            .optional()?
            .ok_or_else(|| Error::NotFound(format!("node id {id}")))?;
        self.build_node(raw)
    }

    /// Loads a node together with its file contents.
    pub fn get_node_with_contents(&self, uuid: Uuid) -> Result<Node> {
        let mut node = self.get_node(uuid)?;
        for file in node.files.values_mut() {
            file.content = Some(self.store.read_blob(&file.sha256)?);
        }
        Ok(node)
    }

    /// All nodes, ascending id, optionally restricted to a kind subtree.
    pub fn nodes(&self, kind: Option<&NodeKind>) -> Result<Vec<Node>> {
        let mut out = Vec::new();
        match kind {
            Some(k) => {
                let mut stmt = self.conn.prepare_cached(&format!(
                    "SELECT {NODE_COLUMNS} FROM nodes WHERE kind = ?1 OR kind LIKE ?2 ORDER BY id"
                ))?;
                let raws: Vec<_> = stmt
                    .query_map(params![k.as_str(), format!("{}.%", k.as_str())], row_to_node)?
                    .collect::<rusqlite::Result<_>>()?;
                for raw in raws {
                    out.push(self.build_node(raw)?);
                }
            }
            None => {
                let mut stmt = self.conn.prepare_cached(&format!("SELECT {NODE_COLUMNS} FROM nodes ORDER BY id"))?;
                let raws: Vec<_> = stmt.query_map([], row_to_node)?.collect::<rusqlite::Result<_>>()?;
                for raw in raws {
                    out.push(self.build_node(raw)?);
                }
            }
        }
        Ok(out)
    }

    pub fn count_nodes(&self) -> Result<i64> {
        Ok(self.conn.query_row("SELECT COUNT(*) FROM nodes", [], |r| r.get(0))?)
    }

    pub fn count_links(&self) -> Result<i64> {
        Ok(self.conn.query_row("SELECT COUNT(*) FROM links", [], |r| r.get(0))?)
    }

    pub fn read_file(&self, uuid: Uuid, path: &str) -> Result<Vec<u8>> {
        let id = self.require_node_id(uuid)?;
        let sha: Option<String> = self
            .conn
            .prepare_cached("SELECT sha256 FROM repo_files WHERE node_id = ?1 AND path = ?2")?
            .query_row(params![id, path], |r| r.get(0))
            .optional()?;
        let sha = sha.ok_or_else(|| Error::NotFound(format!("file `{path}` in node {uuid}")))?;
        self.store.read_blob(&sha)
    }

    /// Validates against the current graph and inserts; in table mode the
    /// closure is extended in the same transaction.
    pub fn insert_link(&self, link: &Link) -> Result<i64> {
        graph::validate_link(self, link)?;
        let source = self.require_node_id(link.source)?;
        let target = self.require_node_id(link.target)?;
        self.conn
            .prepare_cached("INSERT INTO links(source, target, type, label) VALUES (?1, ?2, ?3, ?4)")?
            .execute(params![source, target, link.link_type.as_str(), link.label.as_str()])?;
        let id = self.conn.last_insert_rowid();
        if self.store.tc_mode == TcMode::Table && link.link_type.is_data_provenance() {
            self.extend_tc(source, target)?;
        }
        Ok(id)
    }

    fn extend_tc(&self, source: i64, target: i64) -> Result<()> {
        self.conn
            .prepare_cached(
                "INSERT INTO tc(ancestor, descendant, depth)
                 SELECT a.n, d.n, a.dep + 1 + d.dep FROM
                   (SELECT ancestor AS n, depth AS dep FROM tc WHERE descendant = ?1 UNION ALL SELECT ?1, 0) AS a,
                   (SELECT descendant AS n, depth AS dep FROM tc WHERE ancestor = ?2 UNION ALL SELECT ?2, 0) AS d
                 WHERE 1
                 ON CONFLICT(ancestor, descendant) DO UPDATE SET depth = MIN(depth, excluded.depth)",
            )?
            .execute(params![source, target])?;
        Ok(())
    }

    fn link_rows(&self, sql: &str, id: i64) -> Result<Vec<LinkRecord>> {
        let mut stmt = self.conn.prepare_cached(sql)?;
        let rows = stmt.query_map(params![id], |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?, r.get::<_, String>(4)?))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (id, s, t, ty, label) = row?;
            out.push(LinkRecord {
                id,
                link: Link {
                    source: parse_uuid(&s)?,
                    target: parse_uuid(&t)?,
                    link_type: ty.parse().map_err(Error::Archive)?,
                    label: LinkLabel::new(&label).map_err(|v| Error::Archive(v.to_string()))?,
                },
            });
        }
        Ok(out)
    }

    /// Incoming links, ascending link id.
    pub fn links_into(&self, uuid: Uuid) -> Result<Vec<LinkRecord>> {
        let id = self.require_node_id(uuid)?;
        self.link_rows(
            "SELECT l.id, s.uuid, t.uuid, l.type, l.label FROM links l
             JOIN nodes s ON s.id = l.source JOIN nodes t ON t.id = l.target
             WHERE l.target = ?1 ORDER BY l.id",
            id,
        )
    }

    /// Outgoing links, ascending link id.
    pub fn links_from(&self, uuid: Uuid) -> Result<Vec<LinkRecord>> {
        let id = self.require_node_id(uuid)?;
        self.link_rows(
            "SELECT l.id, s.uuid, t.uuid, l.type, l.label FROM links l
             JOIN nodes s ON s.id = l.source JOIN nodes t ON t.id = l.target
             WHERE l.source = ?1 ORDER BY l.id",
            id,
        )
    }

    pub fn all_links(&self) -> Result<Vec<LinkRecord>> {
        let mut stmt = self.conn.prepare_cached(
            "SELECT l.id, s.uuid, t.uuid, l.type, l.label FROM links l
             JOIN nodes s ON s.id = l.source JOIN nodes t ON t.id = l.target ORDER BY l.id",
        )?;
        let rows: Vec<(i64, String, String, String, String)> = stmt
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)))?
            .collect::<rusqlite::Result<_>>()?;
        rows.into_iter()
            .map(|(id, s, t, ty, label)| {
                Ok(LinkRecord {
                    id,
                    link: Link {
                        source: parse_uuid(&s)?,
                        target: parse_uuid(&t)?,
                        link_type: ty.parse().map_err(Error::Archive)?,
                        label: LinkLabel::new(&label).map_err(|v| Error::Archive(v.to_string()))?,
                    },
                })
            })
            .collect()
    }

    /// Raw id-level adjacency over the given link types: (link id, neighbour id, type, label).
    pub(crate) fn neighbours(&self, id: i64, outgoing: bool) -> Result<Vec<(i64, i64, LinkType, String)>> {
        let sql = if outgoing {
            "SELECT id, target, type, label FROM links WHERE source = ?1 ORDER BY id"
        } else {
            "SELECT id, source, type, label FROM links WHERE target = ?1 ORDER BY id"
        };
        let mut stmt = self.conn.prepare_cached(sql)?;
        let rows = stmt.query_map(params![id], |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (lid, n, ty, label) = row?;
            out.push((lid, n, ty.parse().map_err(Error::Archive)?, label));
        }
        Ok(out)
    }

    /// Data-provenance successors (or predecessors) of a node id.
    pub(crate) fn dp_neighbours(&self, id: i64, outgoing: bool) -> Result<Vec<i64>> {
        let sql = if outgoing {
            "SELECT target FROM links WHERE source = ?1 AND type IN ('INPUT_CALC', 'CREATE')"
        } else {
            "SELECT source FROM links WHERE target = ?1 AND type IN ('INPUT_CALC', 'CREATE')"
        };
        let mut stmt = self.conn.prepare_cached(sql)?;
        let rows = stmt.query_map(params![id], |r| r.get::<_, i64>(0))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    fn mutate_extras(&self, uuid: Uuid, f: impl FnOnce(&mut Document) -> Result<()>) -> Result<()> {
        let id = self.require_node_id(uuid)?;
        let text: String = self.conn.query_row("SELECT extras FROM nodes WHERE id = ?1", params![id], |r| r.get(0))?;
        let mut extras = parse_doc(&text)?;
        f(&mut extras)?;
        attrs::validate(&extras)?;
        self.conn.execute(
            "UPDATE nodes SET extras = ?1, mtime = ?2 WHERE id = ?3",
            params![attrs::canonical_json(&Value::Object(extras)), fmt_ts(now_ts()), id],
        )?;
        Ok(())
    }

    fn extras_path(path: &str) -> Result<&str> {
        if path == "attributes" || path.starts_with("attributes.") {
            return Err(Error::Immutable(format!("`{path}` is an attribute of a stored node")));
        }
        Ok(path.strip_prefix("extras.").unwrap_or(path))
    }

    pub fn set_extra(&self, uuid: Uuid, path: &str, value: Value) -> Result<()> {
        let path = Self::extras_path(path)?;
        self.mutate_extras(uuid, |doc| Ok(attrs::set_path(doc, path, value)?))
    }

    /// Idempotent: deleting a missing key succeeds.
    pub fn delete_extra(&self, uuid: Uuid, path: &str) -> Result<()> {
        let path = Self::extras_path(path)?;
        self.mutate_extras(uuid, |doc| {
            attrs::delete_path(doc, path)?;
            Ok(())
        })
    }

    /// Last-writer-wins; returns the new version number.
    pub fn save_checkpoint(&self, process: Uuid, data: &[u8]) -> Result<i64> {
        let id = self.require_node_id(process)?;
        self.conn
            .prepare_cached(
                "INSERT INTO checkpoints(node_id, version, data, updated_at) VALUES (?1, 1, ?2, ?3)
                 ON CONFLICT(node_id) DO UPDATE SET version = version + 1, data = excluded.data, updated_at = excluded.updated_at",
            )?
            .execute(params![id, data, fmt_ts(now_ts())])?;
        Ok(self.conn.query_row("SELECT version FROM checkpoints WHERE node_id = ?1", params![id], |r| r.get(0))?)
    }

    pub fn load_checkpoint(&self, process: Uuid) -> Result<Vec<u8>> {
        self.try_load_checkpoint(process)?.ok_or_else(|| Error::NotFound(format!("checkpoint for {process}")))
    }

    pub fn try_load_checkpoint(&self, process: Uuid) -> Result<Option<Vec<u8>>> {
        let id = self.require_node_id(process)?;
        Ok(self
            .conn
            .prepare_cached("SELECT data FROM checkpoints WHERE node_id = ?1")?
            .query_row(params![id], |r| r.get(0))
            .optional()?)
    }

    pub fn checkpoint_version(&self, process: Uuid) -> Result<i64> {
        let id = self.require_node_id(process)?;
        Ok(self
            .conn
            .query_row("SELECT version FROM checkpoints WHERE node_id = ?1", params![id], |r| r.get(0))
            .optional()?
            .unwrap_or(0))
    }

    /// Rows of the materialized closure, sorted.
    pub fn tc_rows(&self) -> Result<BTreeSet<TcRow>> {
        let mut stmt = self.conn.prepare("SELECT ancestor, descendant, depth FROM tc")?;
        let rows = stmt.query_map([], |r| Ok(TcRow { ancestor: r.get(0)?, descendant: r.get(1)?, depth: r.get(2)? }))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// The closure recomputed from the links table by breadth-first search.
    pub fn tc_from_links(&self) -> Result<BTreeSet<TcRow>> {
        let mut succ: HashMap<i64, Vec<i64>> = HashMap::new();
        let mut stmt = self.conn.prepare("SELECT source, target FROM links WHERE type IN ('INPUT_CALC', 'CREATE')")?;
        for row in stmt.query_map([], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, i64>(1)?)))? {
            let (s, t) = row?;
            succ.entry(s).or_default().push(t);
        }
        let mut out = BTreeSet::new();
        for &start in succ.keys() {
            let mut depth: HashMap<i64, i64> = HashMap::new();
            let mut queue = VecDeque::from([(start, 0i64)]);
            while let Some((n, d)) = queue.pop_front() {
                for &m in succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
                    if m != start && !depth.contains_key(&m) {
                        depth.insert(m, d + 1);
                        queue.push_back((m, d + 1));
                    }
                }
            }
            out.extend(depth.into_iter().map(|(d, depth)| TcRow { ancestor: start, descendant: d, depth }));
        }
        Ok(out)
    }

    pub fn rebuild_tc(&self) -> Result<()> {
        self.conn.execute("DELETE FROM tc", [])?;
        let rows = self.tc_from_links()?;
        let mut stmt = self.conn.prepare_cached("INSERT INTO tc(ancestor, descendant, depth) VALUES (?1, ?2, ?3)")?;
        for r in rows {
            stmt.execute(params![r.ancestor, r.descendant, r.depth])?;
        }
        Ok(())
    }

    /// Whether a data-provenance path `from ->+ to` exists.
    pub fn reaches(&self, from: i64, to: i64) -> Result<bool> {
        if self.store.tc_mode == TcMode::Table {
            let found: Option<i64> = self
                .conn
                .prepare_cached("SELECT 1 FROM tc WHERE ancestor = ?1 AND descendant = ?2")?
                .query_row(params![from, to], |r| r.get(0))
                .optional()?;
            return Ok(found.is_some());
        }
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for m in self.dp_neighbours(n, true)? {
                if m == to {
                    return Ok(true);
                }
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        Ok(false)
    }

    pub fn node_uuids_sorted(&self) -> Result<Vec<Uuid>> {
        let mut stmt = self.conn.prepare("SELECT uuid FROM nodes ORDER BY id")?;
        let rows: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        rows.iter().map(|s| parse_uuid(s)).collect()
    }

    /// Bytes of a stored blob by digest.
    pub(crate) fn blob(&self, sha: &str) -> Result<Vec<u8>> {
        self.store.read_blob(sha)
    }

    pub(crate) fn put_blob(&self, content: &[u8]) -> Result<String> {
        let sha = sha256_hex(content);
        self.store.write_blob(&sha, content)?;
        Ok(sha)
    }
}

fn view_err(e: Error) -> ViewError {
    ViewError(e.to_string())
}

impl GraphView for Tx<'_> {
    fn node_kind(&self, node: &Uuid) -> Result<Option<NodeKind>, ViewError> {
        Tx::node_kind(self, *node).map_err(view_err)
    }

    fn links_into(&self, node: &Uuid) -> Result<Vec<Link>, ViewError> {
        Tx::links_into(self, *node).map(|v| v.into_iter().map(|r| r.link).collect()).map_err(view_err)
    }

    fn links_from(&self, node: &Uuid) -> Result<Vec<Link>, ViewError> {
        Tx::links_from(self, *node).map(|v| v.into_iter().map(|r| r.link).collect()).map_err(view_err)
    }

    fn node_uuids(&self) -> Result<Vec<Uuid>, ViewError> {
        self.node_uuids_sorted().map_err(view_err)
    }

    fn data_provenance_path(&self, from: &Uuid, to: &Uuid) -> Result<Option<Vec<Uuid>>, ViewError> {
        let (f, t) = match (self.node_id(*from).map_err(view_err)?, self.node_id(*to).map_err(view_err)?) {
            (Some(f), Some(t)) => (f, t),
            _ => return Ok(None),
        };
        // Cheap reachability first; the path is only reconstructed on a hit.
        if f != t && !self.reaches(f, t).map_err(view_err)? {
            return Ok(None);
        }
        let mut parent: HashMap<i64, i64> = HashMap::new();
        let mut seen = BTreeSet::from([f]);
        let mut queue = VecDeque::from([f]);
        while let Some(n) = queue.pop_front() {
            if n == t {
                let mut ids = vec![n];
                let mut cur = n;
                while let Some(&p) = parent.get(&cur) {
                    ids.push(p);
                    cur = p;
                }
                ids.reverse();
                return ids.into_iter().map(|i| self.node_uuid(i)).collect::<Result<Vec<_>>>().map(Some).map_err(view_err);
            }
            for m in self.dp_neighbours(n, true).map_err(view_err)? {
                if seen.insert(m) {
                    parent.insert(m, n);
                    queue.push_back(m);
                }
            }
        }
        Ok(None)
    }
}
