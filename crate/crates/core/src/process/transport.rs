//! Transports to computers and the per-worker connection pool.
//!
//! Only a local transport exists: the "remote" side is a directory tree
//! under the store (`computers/<name>/work`). Faults can be injected by
//! writing a `fault` file into the computer directory: an integer `n` makes
//! the next `n` connection attempts fail transiently, `*` makes every
//! attempt fail until the file is removed.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};

use crate::engine::backoff::Fault;
use crate::error::{Error, Result};
use crate::store::Tx;

use super::scheduler::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportClass {
    Local,
    Remote,
}

/// A configured computer: where calculation jobs run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Computer {
    pub name: String,
    pub class: TransportClass,
    /// Minimum seconds between opening two connections.
    pub min_interval: f64,
    /// Seconds a scheduler status listing stays valid.
    pub status_window: f64,
    #[serde(default)]
    pub scheduler: SimConfig,
}

pub const DEFAULT_COMPUTER: &str = "localhost";

impl Computer {
    /// Local-class computer: no connection spacing, a short status window.
    pub fn local(name: &str) -> Self {
        Computer {
            name: name.to_string(),
            class: TransportClass::Local,
            min_interval: 0.0,
            status_window: 1.0,
            scheduler: SimConfig::default(),
        }
    }

    /// Remote-class computer with the conservative defaults.
    pub fn remote(name: &str) -> Self {
        Computer {
            name: name.to_string(),
            class: TransportClass::Remote,
            min_interval: 30.0,
            status_window: 10.0,
            scheduler: SimConfig::default(),
        }
    }

    pub fn dir(&self, store_root: &Path) -> PathBuf {
        store_root.join("computers").join(&self.name)
    }

    pub fn load(tx: &Tx<'_>, name: &str) -> Result<Computer> {
        let text: Option<String> = tx
            .conn()
            .prepare_cached("SELECT value FROM meta WHERE key = ?1")?
            .query_row(params![format!("computer:{name}")], |r| r.get(0))
            .optional()?;
        match text {
            Some(t) => Ok(serde_json::from_str(&t)?),
            None if name == DEFAULT_COMPUTER => Ok(Computer::local(DEFAULT_COMPUTER)),
            None => Err(Error::NotFound(format!("computer `{name}`"))),
        }
    }

    pub fn save(&self, tx: &Tx<'_>) -> Result<()> {
        tx.conn().execute(
            "INSERT INTO meta(key, value) VALUES (?1, ?2) ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            params![format!("computer:{}", self.name), serde_json::to_string(self)?],
        )?;
        Ok(())
    }

    pub fn list(tx: &Tx<'_>) -> Result<Vec<Computer>> {
        let mut stmt = tx.conn().prepare("SELECT value FROM meta WHERE key LIKE 'computer:%' ORDER BY key")?;
        let rows: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        rows.iter().map(|t| Ok(serde_json::from_str(t)?)).collect()
    }
}

/// Transport contract: everything a calculation job needs from a computer.
pub trait Transport {
    fn put_file(&self, remote: &str, content: &[u8]) -> Result<(), Fault>;
    fn get_file(&self, remote: &str) -> Result<Option<Vec<u8>>, Fault>;
    /// Runs a shell command in `cwd` (relative to the work tree).
    fn exec(&self, cwd: &str, command: &str) -> Result<(i32, String), Fault>;
    fn work_root(&self) -> PathBuf;
}

/// Transport on the local filesystem.
#[derive(Debug, Clone)]
pub struct LocalTransport {
    root: PathBuf,
}

fn io_fault(e: std::io::Error) -> Fault {
    Fault::Transient(e.to_string())
}

impl LocalTransport {
    /// Opens a connection, honouring injected faults.
    pub fn open(computer_dir: &Path) -> Result<LocalTransport, Fault> {
        let fault = computer_dir.join("fault");
        if let Ok(text) = fs::read_to_string(&fault) {
            let text = text.trim();
            if text == "*" {
                return Err(Fault::Transient("connection refused (computer offline)".into()));
            }
            if let Ok(n) = text.parse::<u64>() {
                if n > 0 {
                    fs::write(&fault, (n - 1).to_string()).map_err(io_fault)?;
                    return Err(Fault::Transient(format!("connection refused ({} more scripted failures)", n - 1)));
                }
            }
        }
        let root = computer_dir.join("work");
        fs::create_dir_all(&root).map_err(io_fault)?;
        Ok(LocalTransport { root })
    }

    fn resolve(&self, remote: &str) -> Result<PathBuf, Fault> {
        if remote.starts_with('/') || remote.split('/').any(|s| s == "..") {
            return Err(Fault::Permanent(format!("path `{remote}` escapes the work tree")));
        }
        Ok(self.root.join(remote))
    }
}

impl Transport for LocalTransport {
    fn put_file(&self, remote: &str, content: &[u8]) -> Result<(), Fault> {
        let path = self.resolve(remote)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_fault)?;
        }
        fs::write(path, content).map_err(io_fault)
    }

    fn get_file(&self, remote: &str) -> Result<Option<Vec<u8>>, Fault> {
        match fs::read(self.resolve(remote)?) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_fault(e)),
        }
    }

    fn exec(&self, cwd: &str, command: &str) -> Result<(i32, String), Fault> {
        let out = Command::new("bash").arg("-c").arg(command).current_dir(self.resolve(cwd)?).output().map_err(io_fault)?;
        Ok((out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned()))
    }

    fn work_root(&self) -> PathBuf {
        self.root.clone()
    }
}

/// Writes or clears an injected transport fault.
pub fn set_fault(computer_dir: &Path, fault: Option<&str>) -> std::io::Result<()> {
    fs::create_dir_all(computer_dir)?;
    let path = computer_dir.join("fault");
    match fault {
        Some(f) => fs::write(path, f),
        None => match fs::remove_file(path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        },
    }
}

/// Result of asking the pool for a connection.
pub enum Acquire<'p> {
    Ready(&'p LocalTransport),
    /// No connection may be opened before this time.
    WaitUntil(f64),
}

#[derive(Debug, Default)]
struct PoolEntry {
    open: Option<LocalTransport>,
    last_open: Option<f64>,
}

/// Per-worker connection pool. Requests to a computer reuse its open
/// connection; opening a new one respects the computer's minimum interval.
/// Connections are closed when the worker goes idle at the end of a tick.
#[derive(Debug, Default)]
pub struct TransportPool {
    entries: HashMap<String, PoolEntry>,
    opens: Vec<(String, f64)>,
}

impl TransportPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&mut self, computer: &Computer, computer_dir: &Path, now: f64) -> Result<Acquire<'_>, Fault> {
        let entry = self.entries.entry(computer.name.clone()).or_default();
        if entry.open.is_none() {
            if let Some(last) = entry.last_open {
                if now < last + computer.min_interval {
                    return Ok(Acquire::WaitUntil(last + computer.min_interval));
                }
            }
            // A failed attempt also counts as an opening for spacing purposes.
            entry.last_open = Some(now);
            self.opens.push((computer.name.clone(), now));
            entry.open = Some(LocalTransport::open(computer_dir)?);
        }
        Ok(Acquire::Ready(entry.open.as_ref().expect("connection just opened")))
    }

    /// Closes every open connection.
    pub fn release_idle(&mut self) {
        for e in self.entries.values_mut() {
            e.open = None;
        }
    }

    /// Every connection opening as (computer, time).
    pub fn open_log(&self) -> &[(String, f64)] {
        &self.opens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_faults_count_down() {
        let dir = tempfile::tempdir().unwrap();
        set_fault(dir.path(), Some("2")).unwrap();
        assert!(LocalTransport::open(dir.path()).is_err());
        assert!(LocalTransport::open(dir.path()).is_err());
        assert!(LocalTransport::open(dir.path()).is_ok());
        set_fault(dir.path(), Some("*")).unwrap();
        for _ in 0..3 {
            assert!(matches!(LocalTransport::open(dir.path()), Err(Fault::Transient(_))));
        }
        set_fault(dir.path(), None).unwrap();
        set_fault(dir.path(), None).unwrap();
        let t = LocalTransport::open(dir.path()).unwrap();
        t.put_file("job/a.txt", b"hi").unwrap();
        assert_eq!(t.get_file("job/a.txt").unwrap().unwrap(), b"hi");
        assert_eq!(t.get_file("job/none").unwrap(), None);
        assert!(matches!(t.put_file("../x", b""), Err(Fault::Permanent(_))));
        assert_eq!(t.exec("job", "cat a.txt").unwrap(), (0, "hi".to_string()));
    }

    #[test]
    fn pool_reuses_and_spaces_openings() {
        let dir = tempfile::tempdir().unwrap();
        let mut remote = Computer::remote("cluster");
        remote.min_interval = 5.0;
        let mut pool = TransportPool::new();
        // Ten concurrent requests in one tick share a single connection.
        for _ in 0..10 {
            assert!(matches!(pool.acquire(&remote, dir.path(), 100.0).unwrap(), Acquire::Ready(_)));
        }
        assert_eq!(pool.open_log().len(), 1);
        pool.release_idle();
        match pool.acquire(&remote, dir.path(), 102.0).unwrap() {
            Acquire::WaitUntil(t) => assert_eq!(t, 105.0),
            Acquire::Ready(_) => panic!("opened too early"),
        }
        assert!(matches!(pool.acquire(&remote, dir.path(), 105.0).unwrap(), Acquire::Ready(_)));
        let log = pool.open_log();
        assert_eq!(log.len(), 2);
        assert!(log[1].1 - log[0].1 >= 5.0);
    }

    #[test]
    fn local_class_imposes_no_delay() {
        let dir = tempfile::tempdir().unwrap();
        let local = Computer::local("localhost");
        let mut pool = TransportPool::new();
        for i in 0..5 {
            pool.release_idle();
            assert!(matches!(pool.acquire(&local, dir.path(), 10.0 + f64::from(i) * 1e-3).unwrap(), Acquire::Ready(_)));
        }
        assert_eq!(pool.open_log().len(), 5);
    }
}
