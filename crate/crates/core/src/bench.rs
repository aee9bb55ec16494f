//! Desk-scale performance experiments: closure strategies on disjoint
//! trees, and engine throughput in event versus polling mode.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rusqlite::params;
use serde::Serialize;
use uuid::Uuid;

use crate::engine::{Engine, EngineConfig, Mode, WorkerHandle};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::graph;
use crate::kind::NodeKind;
use crate::node::Node;
use crate::process::builtins::REFERENCE;
use crate::process::{Inputs, Registry};
use crate::query::descendant_ids;
use crate::store::{unix_now, Store, TcMode};

/// Roots whose descendants are timed in every configuration.
pub const TC_ROOTS: usize = 50;
pub const TC_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcRow {
    pub n: usize,
    pub breadth: usize,
    pub depth: usize,
    pub strategy: TcMode,
    /// Median over [`TC_REPEATS`] runs of the total query time.
    pub seconds: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Builds `n` trees in a fresh store under `dir`, checks that both
/// strategies agree on the descendants of the first [`TC_ROOTS`] roots, and
/// times each strategy.
pub fn tc(dir: &Path, n: usize, breadth: usize, depth: usize) -> Result<[TcRow; 2]> {
    if n < TC_ROOTS {
        return Err(Error::Config(format!("at least {TC_ROOTS} trees are needed, got {n}")));
    }
    let mut store = Store::open(dir)?;
    store.set_tc_mode(TcMode::Table)?;
    let roots = store.write(|tx| fixtures::trees(tx, n, breadth, depth))?;
    let ids: Vec<i64> = store.read(|tx| roots[..TC_ROOTS].iter().map(|&u| tx.require_node_id(u)).collect())?;
    store.read(|tx| {
        for &id in &ids {
            let otf = descendant_ids(tx, id, TcMode::Otf, None)?;
            let table = descendant_ids(tx, id, TcMode::Table, None)?;
            if otf != table {
                return Err(Error::Config(format!("strategies disagree on the descendants of node {id}")));
            }
        }
        Ok(())
    })?;
    let time = |mode: TcMode| -> Result<f64> {
        let mut runs = Vec::with_capacity(TC_REPEATS);
        for _ in 0..TC_REPEATS {
            let start = Instant::now();
            store.read(|tx| {
                for &id in &ids {
                    descendant_ids(tx, id, mode, None)?;
                }
                Ok(())
            })?;
            runs.push(start.elapsed().as_secs_f64());
        }
        Ok(median(runs))
    };
    let row = |strategy, seconds| TcRow { n, breadth, depth, strategy, seconds };
    Ok([row(TcMode::Otf, time(TcMode::Otf)?), row(TcMode::Table, time(TcMode::Table)?)])
}

/// Runs [`tc`] for every `n`, each in its own subdirectory of `dir`.
pub fn tc_sweep(dir: &Path, ns: &[usize], breadth: usize, depth: usize) -> Result<Vec<TcRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        let sub = dir.join(format!("tc-{n}-{breadth}-{depth}"));
        if sub.exists() {
            std::fs::remove_dir_all(&sub)?;
        }
        rows.extend(tc(&sub, n, breadth, depth)?);
    }
    Ok(rows)
}

pub fn write_tc_csv(path: &Path, rows: &[TcRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "N,B,D,strategy,seconds")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{:.6}", r.n, r.breadth, r.depth, r.strategy.as_str(), r.seconds)?;
    }
    Ok(())
}

/// Who executes the submitted chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workers {
    /// Worker threads started (and stopped) by the benchmark.
    InProcess(usize),
    /// A daemon that is already running against the store.
    External,
}

#[derive(Debug, Clone)]
pub struct EngineBench {
    pub workchains: usize,
    pub workers: Workers,
    pub mode: Mode,
    pub poll_interval: f64,
    /// Gives up after this long.
    pub timeout: Duration,
}

impl Default for EngineBench {
    fn default() -> Self {
        EngineBench {
            workchains: 400,
            workers: Workers::InProcess(4),
            mode: Mode::Event,
            poll_interval: 5.0,
            timeout: Duration::from_secs(900),
        }
    }
}

/// One point of the cumulative series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    /// Seconds since the first submission.
    pub t: f64,
    pub submitted: usize,
    pub completed: usize,
    pub workchain: usize,
    pub calcjob: usize,
    pub calcfunction: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineReport {
    pub mode: Mode,
    pub workchains: usize,
    pub samples: Vec<Sample>,
    /// Terminal-state times of every process, seconds since the first
    /// submission, ascending.
    pub completions: Vec<f64>,
    pub wall_seconds: f64,
    pub processes: usize,
    pub processes_per_hour: f64,
    /// Longest interval between two consecutive completions.
    pub longest_plateau: f64,
    /// Work chains that reached finished with exit code 0.
    pub finished_ok: usize,
    /// Whether the resulting graph passes full validation.
    pub graph_valid: bool,
}

fn flavor_column(kind: &str) -> Option<usize> {
    match kind {
        NodeKind::WORKCHAIN => Some(0),
        NodeKind::CALCJOB => Some(1),
        NodeKind::CALCFUNCTION => Some(2),
        _ => None,
    }
}

/// Terminal events after `since` as (seconds, kind), ascending.
fn terminal_events(store: &Store, since: f64) -> Result<Vec<(f64, String)>> {
    store.read(|tx| {
        let mut stmt = tx.conn().prepare_cached(
            "SELECT e.at, n.kind FROM events e JOIN nodes n ON n.uuid = e.process_uuid
             WHERE e.at >= ?1 AND e.new_state IN ('finished', 'excepted', 'killed') ORDER BY e.at",
        )?;
        let rows = stmt.query_map(params![since], |r| Ok((r.get(0)?, r.get(1)?)))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    })
}

/// Submits `bench.workchains` reference chains and samples completion once
/// per second until all are terminal.
pub fn engine(root: &Path, registry: Arc<Registry>, bench: &EngineBench) -> Result<EngineReport> {
    let mut eng = Engine::open(root, registry)?;
    let config = EngineConfig { mode: bench.mode, poll_interval: bench.poll_interval, ..eng.config().clone() };
    eng.configure(config)?;
    let handles: Vec<WorkerHandle> = match bench.workers {
        Workers::InProcess(w) => (0..w).map(|i| eng.spawn_worker(&format!("bench-{i}"))).collect::<Result<_>>()?,
        Workers::External => {
            if eng.daemon_status()?.alive == 0 {
                return Err(Error::Config("no daemon worker is alive".into()));
            }
            Vec::new()
        }
    };
    let t0 = unix_now();
    let mut chains: Vec<Uuid> = Vec::with_capacity(bench.workchains);
    for i in 0..bench.workchains {
        let i = i as i64;
        let inputs = Inputs::from([
            ("x".to_string(), Node::int(i)),
            ("y".to_string(), Node::int(i + 1)),
            ("z".to_string(), Node::int(i + 2)),
        ]);
        chains.push(eng.submit(REFERENCE, inputs)?);
    }
    let submitted = chains.len();
    let deadline = Instant::now() + bench.timeout;
    let mut samples = Vec::new();
    let mut next_sample = Instant::now();
    loop {
        let events = terminal_events(eng.store(), t0)?;
        let mut per = [0usize; 3];
        for (_, kind) in &events {
            if let Some(c) = flavor_column(kind) {
                per[c] += 1;
            }
        }
        samples.push(Sample {
            t: unix_now() - t0,
            submitted,
            completed: events.len(),
            workchain: per[0],
            calcjob: per[1],
            calcfunction: per[2],
        });
        if per[0] >= submitted || Instant::now() >= deadline {
            break;
        }
        next_sample += Duration::from_secs(1);
        thread::sleep(next_sample.saturating_duration_since(Instant::now()));
    }
    for h in handles {
        h.stop()?;
    }
    let events = terminal_events(eng.store(), t0)?;
    let completions: Vec<f64> = events.iter().map(|(at, _)| at - t0).collect();
    let wall = completions.last().copied().unwrap_or(0.0);
    let longest_plateau = completions.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let finished_ok = eng.store().read(|tx| {
        let mut n = 0;
        for &u in &chains {
            let st = crate::engine::state::status(tx, u)?;
            if st.state == crate::ProcessState::Finished && st.exit_code == Some(0) {
                n += 1;
            }
        }
        Ok(n)
    })?;
    let graph_valid = eng.store().read(|tx| Ok(graph::check_data_provenance_acyclic(tx)?.is_ok()))?;
    Ok(EngineReport {
        mode: bench.mode,
        workchains: bench.workchains,
        processes: events.len(),
        processes_per_hour: if wall > 0.0 { events.len() as f64 * 3600.0 / wall } else { 0.0 },
        samples,
        completions,
        wall_seconds: wall,
        longest_plateau,
        finished_ok,
        graph_valid,
    })
}

pub fn write_engine_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "t,submitted,completed,workchain,calcjob,calcfunction")?;
    for s in samples {
        writeln!(f, "{:.3},{},{},{},{},{}", s.t, s.submitted, s.completed, s.workchain, s.calcjob, s.calcfunction)?;
    }
    Ok(())
}

/// Per-flavor counts of a report's final sample.
pub fn final_counts(report: &EngineReport) -> BTreeMap<&'static str, usize> {
    let last = report.samples.last();
    BTreeMap::from([
        ("workchain", last.map_or(0, |s| s.workchain)),
        ("calcjob", last.map_or(0, |s| s.calcjob)),
        ("calcfunction", last.map_or(0, |s| s.calcfunction)),
    ])
}
