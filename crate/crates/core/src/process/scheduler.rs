//! Scheduler contract, the simulated batch scheduler and the per-worker
//! status cache.
//!
//! The simulated scheduler keeps one JSON record per job under
//! `computers/<name>/scheduler/jobs`. A job is queued for `queued_delay`
//! seconds, then running for `running_delay` seconds, and is settled by the
//! first status listing after that: jobs whose ordinal is listed in
//! `fail_ordinals` end `failed` without running, every other job runs its
//! script exactly once and ends `done`. Killing forces `failed`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::engine::backoff::Fault;
use crate::store::unix_now;

use super::transport::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_final(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

/// Scheduler contract used by calculation jobs.
pub trait SchedulerAdapter {
    /// Submits `script` located in `workdir` (relative to the transport's work tree).
    fn submit(&self, transport: &dyn Transport, workdir: &str, script: &str) -> Result<String, Fault>;
    /// One batched listing of every job the scheduler knows.
    fn status(&self, transport: &dyn Transport) -> Result<BTreeMap<String, JobState>, Fault>;
    fn kill(&self, transport: &dyn Transport, job_id: &str) -> Result<(), Fault>;
    /// Job previously submitted from `workdir`, if the scheduler tracks it.
    fn find(&self, _transport: &dyn Transport, _workdir: &str) -> Result<Option<String>, Fault> {
        Ok(None)
    }
}

/// Timing and failure script of the simulated scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub queued_delay: f64,
    pub running_delay: f64,
    /// 1-based submission ordinals that end `failed`.
    #[serde(default)]
    pub fail_ordinals: Vec<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { queued_delay: 0.1, running_delay: 0.1, fail_ordinals: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JobRecord {
    id: u64,
    workdir: String,
    script: String,
    submitted_at: f64,
    /// Set once the job is settled or killed.
    settled: Option<JobState>,
}

#[derive(Debug, Clone)]
pub struct SimScheduler {
    dir: PathBuf,
    config: SimConfig,
}

fn io_fault(e: std::io::Error) -> Fault {
    Fault::Transient(e.to_string())
}

impl SimScheduler {
    pub fn new(computer_dir: &Path, config: SimConfig) -> Self {
        SimScheduler { dir: computer_dir.join("scheduler"), config }
    }

    fn jobs_dir(&self) -> PathBuf {
        self.dir.join("jobs")
    }

    fn record_path(&self, id: u64) -> PathBuf {
        self.jobs_dir().join(format!("{id}.json"))
    }

    fn read(&self, id: u64) -> Result<Option<JobRecord>, Fault> {
        match fs::read(self.record_path(id)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| Fault::Permanent(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_fault(e)),
        }
    }

    fn write(&self, rec: &JobRecord) -> Result<(), Fault> {
        let tmp = self.jobs_dir().join(format!(".{}.{}.tmp", rec.id, std::process::id()));
        fs::write(&tmp, serde_json::to_vec(rec).map_err(|e| Fault::Permanent(e.to_string()))?).map_err(io_fault)?;
        fs::rename(tmp, self.record_path(rec.id)).map_err(io_fault)
    }

    fn job_ids(&self) -> Result<Vec<u64>, Fault> {
        let mut ids = Vec::new();
        match fs::read_dir(self.jobs_dir()) {
            Ok(entries) => {
                for e in entries {
                    let name = e.map_err(io_fault)?.file_name();
                    if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")).and_then(|n| n.parse().ok()) {
                        ids.push(id);
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_fault(e)),
        }
        ids.sort_unstable();
        Ok(ids)
    }

    /// Advances one job to its current state, running it if it is due.
    fn settle(&self, transport: &dyn Transport, mut rec: JobRecord, now: f64) -> Result<JobState, Fault> {
        if let Some(s) = rec.settled {
            return Ok(s);
        }
        let age = now - rec.submitted_at;
        if age < self.config.queued_delay {
            return Ok(JobState::Queued);
        }
        if age < self.config.queued_delay + self.config.running_delay {
            return Ok(JobState::Running);
        }
        if self.config.fail_ordinals.contains(&rec.id) {
            rec.settled = Some(JobState::Failed);
            self.write(&rec)?;
            return Ok(JobState::Failed);
        }
        // The marker makes sure only one caller runs the script.
        let marker = self.jobs_dir().join(format!("{}.ran", rec.id));
        match OpenOptions::new().write(true).create_new(true).open(&marker) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Ok(JobState::Running),
            Err(e) => return Err(io_fault(e)),
        }
        let cwd = transport.work_root().join(&rec.workdir);
        let out = Command::new("bash").arg(&rec.script).current_dir(&cwd).output().map_err(io_fault)?;
        let _ = fs::write(cwd.join("_scheduler-stderr.txt"), &out.stderr);
        rec.settled = Some(JobState::Done);
        self.write(&rec)?;
        Ok(JobState::Done)
    }

    /// Number of job scripts executed so far on this computer.
    pub fn executions(computer_dir: &Path) -> usize {
        fs::read_dir(computer_dir.join("scheduler").join("jobs"))
            .map(|it| {
                it.filter_map(|e| e.ok())
                    .filter(|e| e.file_name().to_string_lossy().ends_with(".ran"))
                    .count()
            })
            .unwrap_or(0)
    }
}

impl SchedulerAdapter for SimScheduler {
    fn submit(&self, _transport: &dyn Transport, workdir: &str, script: &str) -> Result<String, Fault> {
        fs::create_dir_all(self.jobs_dir()).map_err(io_fault)?;
        let mut id = self.job_ids()?.last().copied().unwrap_or(0) + 1;
        loop {
            match OpenOptions::new().write(true).create_new(true).open(self.record_path(id)) {
                Ok(_) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => id += 1,
                Err(e) => return Err(io_fault(e)),
            }
        }
        let rec = JobRecord {
            id,
            workdir: workdir.to_string(),
            script: script.to_string(),
            submitted_at: unix_now(),
            settled: None,
        };
        self.write(&rec)?;
        let index = self.dir.join("by_workdir");
        fs::create_dir_all(&index).map_err(io_fault)?;
        fs::write(index.join(workdir.replace('/', "_")), id.to_string()).map_err(io_fault)?;
        Ok(id.to_string())
    }

    fn find(&self, _transport: &dyn Transport, workdir: &str) -> Result<Option<String>, Fault> {
        match fs::read_to_string(self.dir.join("by_workdir").join(workdir.replace('/', "_"))) {
            Ok(id) => Ok(Some(id.trim().to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_fault(e)),
        }
    }

    fn status(&self, transport: &dyn Transport) -> Result<BTreeMap<String, JobState>, Fault> {
        let now = unix_now();
        let mut out = BTreeMap::new();
        for id in self.job_ids()? {
            // A record still being written by a concurrent submit reads as queued.
            let state = match self.read(id) {
                Ok(Some(rec)) => self.settle(transport, rec, now)?,
                Ok(None) | Err(Fault::Permanent(_)) => JobState::Queued,
                Err(e) => return Err(e),
            };
            out.insert(id.to_string(), state);
        }
        Ok(out)
    }

    fn kill(&self, _transport: &dyn Transport, job_id: &str) -> Result<(), Fault> {
        let id: u64 = job_id.parse().map_err(|_| Fault::Permanent(format!("bad job id `{job_id}`")))?;
        let Some(mut rec) = self.read(id)? else {
            return Err(Fault::Permanent(format!("unknown job {job_id}")));
        };
        if rec.settled.is_none() {
            rec.settled = Some(JobState::Failed);
            self.write(&rec)?;
        }
        Ok(())
    }
}

/// Outcome of a cache lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit(JobState),
    /// The listing for this computer is stale; refresh it first.
    Stale,
}

#[derive(Debug, Default)]
struct CacheEntry {
    refreshed_at: f64,
    states: BTreeMap<String, JobState>,
}

/// Per-worker cache of scheduler listings: at most one listing per
/// computer per refresh window, shared by every job the worker tracks.
#[derive(Debug, Default)]
pub struct StatusCache {
    entries: HashMap<String, CacheEntry>,
    calls: u64,
}

impl StatusCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A job missing from a fresh listing was submitted after it was taken
    /// and reads as queued.
    pub fn lookup(&self, computer: &str, job_id: &str, window: f64, now: f64) -> Lookup {
        match self.entries.get(computer) {
            Some(e) if now - e.refreshed_at < window => Lookup::Hit(e.states.get(job_id).copied().unwrap_or(JobState::Queued)),
            _ => Lookup::Stale,
        }
    }

    pub fn store(&mut self, computer: &str, states: BTreeMap<String, JobState>, now: f64) {
        self.calls += 1;
        self.entries.insert(computer.to_string(), CacheEntry { refreshed_at: now, states });
    }

    /// Time at which the listing for `computer` goes stale.
    pub fn expires_at(&self, computer: &str, window: f64) -> Option<f64> {
        self.entries.get(computer).map(|e| e.refreshed_at + window)
    }

    /// Scheduler listings performed so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Returns the state of `job_id`, refreshing through `list` when stale.
    pub fn get(
        &mut self,
        computer: &str,
        job_id: &str,
        window: f64,
        now: f64,
        list: impl FnOnce() -> Result<BTreeMap<String, JobState>, Fault>,
    ) -> Result<JobState, Fault> {
        if let Lookup::Hit(s) = self.lookup(computer, job_id, window, now) {
            return Ok(s);
        }
        let states = list()?;
        let state = states.get(job_id).copied().unwrap_or(JobState::Queued);
        self.store(computer, states, now);
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::transport::LocalTransport;

    fn setup(config: SimConfig) -> (tempfile::TempDir, LocalTransport, SimScheduler) {
        let dir = tempfile::tempdir().unwrap();
        let t = LocalTransport::open(dir.path()).unwrap();
        let s = SimScheduler::new(dir.path(), config);
        (dir, t, s)
    }

    #[test]
    fn job_runs_once_and_completes() {
        let (dir, t, s) = setup(SimConfig { queued_delay: 0.0, running_delay: 0.0, fail_ordinals: vec![] });
        t.put_file("j1/run.sh", b"echo 5 > out.txt\n").unwrap();
        let id = s.submit(&t, "j1", "run.sh").unwrap();
        assert_eq!(id, "1");
        assert_eq!(s.status(&t).unwrap()[&id], JobState::Done);
        assert_eq!(s.status(&t).unwrap()[&id], JobState::Done);
        assert_eq!(t.get_file("j1/out.txt").unwrap().unwrap(), b"5\n");
        assert_eq!(SimScheduler::executions(dir.path()), 1);
    }

    #[test]
    fn scripted_failure_and_kill() {
        let (dir, t, s) = setup(SimConfig { queued_delay: 0.0, running_delay: 0.0, fail_ordinals: vec![2] });
        t.put_file("a/run.sh", b"true\n").unwrap();
        let a = s.submit(&t, "a", "run.sh").unwrap();
        let b = s.submit(&t, "a", "run.sh").unwrap();
        let listing = s.status(&t).unwrap();
        assert_eq!(listing[&a], JobState::Done);
        assert_eq!(listing[&b], JobState::Failed);
        assert_eq!(SimScheduler::executions(dir.path()), 1);

        let (_dir, t, s) = setup(SimConfig { queued_delay: 100.0, running_delay: 0.0, fail_ordinals: vec![] });
        let c = s.submit(&t, "c", "run.sh").unwrap();
        assert_eq!(s.status(&t).unwrap()[&c], JobState::Queued);
        s.kill(&t, &c).unwrap();
        assert_eq!(s.status(&t).unwrap()[&c], JobState::Failed);
    }

    #[test]
    fn states_progress_monotonically() {
        let (_dir, t, s) = setup(SimConfig { queued_delay: 0.15, running_delay: 0.15, fail_ordinals: vec![] });
        t.put_file("p/run.sh", b"true\n").unwrap();
        let id = s.submit(&t, "p", "run.sh").unwrap();
        let mut seen = Vec::new();
        for _ in 0..40 {
            let st = s.status(&t).unwrap()[&id];
            if seen.last() != Some(&st) {
                seen.push(st);
            }
            if st.is_final() {
                break;
            }
            std::thread::sleep(std::time::Duration::from_millis(20));
        }
        assert_eq!(seen, vec![JobState::Queued, JobState::Running, JobState::Done]);
    }

    #[test]
    fn one_listing_per_window() {
        let mut cache = StatusCache::new();
        let jobs: Vec<String> = (1..=50).map(|i| i.to_string()).collect();
        let listing: BTreeMap<String, JobState> = jobs.iter().map(|j| (j.clone(), JobState::Running)).collect();
        let mut calls = 0;
        for q in 0..100 {
            let now = 1000.0 + f64::from(q) * 0.099;
            let job = &jobs[q as usize % jobs.len()];
            let st = cache
                .get("cluster", job, 10.0, now, || {
                    calls += 1;
                    Ok(listing.clone())
                })
                .unwrap();
            assert_eq!(st, JobState::Running);
        }
        assert_eq!(calls, 1);
        assert_eq!(cache.calls(), 1);
        cache.get("cluster", "1", 10.0, 1010.0, || Ok(listing.clone())).unwrap();
        assert_eq!(cache.calls(), 2);
        // Jobs submitted after the listing read as queued until the next one.
        assert_eq!(cache.lookup("cluster", "999", 10.0, 1011.0), Lookup::Hit(JobState::Queued));
        assert_eq!(cache.lookup("other", "1", 10.0, 1011.0), Lookup::Stale);
    }
}
