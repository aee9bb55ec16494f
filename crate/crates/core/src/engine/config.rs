//! Engine configuration, persisted in the store so every worker of a
//! profile runs with the same settings.

use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};

use crate::caching::CachingConfig;
use crate::error::Result;
use crate::process::transport::Computer;
use crate::store::Tx;

use super::backoff::BackoffPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Parents are woken by their children's state changes.
    Event,
    /// Workers act only at polling boundaries every `poll_interval`
    /// seconds, and open at most one connection per computer per boundary.
    Polling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Seconds between worker heartbeats.
    pub heartbeat: f64,
    /// Tasks a worker holds at once.
    pub prefetch: usize,
    pub backoff: BackoffPolicy,
    /// Seconds between scheduling ticks in event mode.
    pub tick: f64,
    pub mode: Mode,
    pub poll_interval: f64,
    /// Seconds an RPC waits for the worker that owns the process.
    pub rpc_timeout: f64,
    /// Waits longer than this release the task instead of holding it.
    pub hold_limit: f64,
    pub caching: CachingConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            heartbeat: 5.0,
            prefetch: 8,
            backoff: BackoffPolicy::default(),
            tick: 0.05,
            mode: Mode::Event,
            poll_interval: 5.0,
            rpc_timeout: 10.0,
            hold_limit: 2.0,
            caching: CachingConfig::default(),
        }
    }
}

const KEY: &str = "engine_config";

impl EngineConfig {
    pub fn load(tx: &Tx<'_>) -> Result<EngineConfig> {
        let text: Option<String> = tx
            .conn()
            .prepare_cached("SELECT value FROM meta WHERE key = ?1")?
            .query_row(params![KEY], |r| r.get(0))
            .optional()?;
        match text {
            Some(t) => Ok(serde_json::from_str(&t)?),
            None => Ok(EngineConfig::default()),
        }
    }

    pub fn save(&self, tx: &Tx<'_>) -> Result<()> {
        tx.conn().execute(
            "INSERT INTO meta(key, value) VALUES (?1, ?2) ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            params![KEY, serde_json::to_string(self)?],
        )?;
        Ok(())
    }

    /// The computer as this engine uses it: in polling mode connections
    /// and scheduler listings are spaced by at least the polling interval.
    pub fn effective(&self, computer: &Computer) -> Computer {
        let mut c = computer.clone();
        if self.mode == Mode::Polling {
            c.min_interval = c.min_interval.max(self.poll_interval);
            c.status_window = c.status_window.max(self.poll_interval);
        }
        c
    }
}
