//! Daemon workers as OS processes: each runs `provflow worker` against the
//! profile's store and registers itself in the store's worker table, which
//! is the only record of who is running.

use std::fs::OpenOptions;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use provflow::engine::{queue, workers, Worker, WorkerInfo};
use provflow::{Registry, Store};

use crate::{domain, CliResult};

const START_TIMEOUT: Duration = Duration::from_secs(20);
const STOP_TIMEOUT: Duration = Duration::from_secs(30);

/// Runs one worker until SIGTERM or SIGINT, then returns its tasks.
pub fn serve_worker(root: &Path, id: Option<String>) -> CliResult {
    let id = id.unwrap_or_else(|| format!("worker-{}", std::process::id()));
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, stop.clone()).map_err(|e| domain(e.to_string()))?;
    }
    let worker = Worker::new(root, Arc::new(Registry::with_builtins()), &id, queue::DAEMON_CHANNEL)?;
    worker.serve(stop, Arc::new(AtomicBool::new(false)))?;
    Ok(())
}

/// Registered workers whose process still exists. Rows left behind by a
/// killed worker are deregistered on the way.
fn alive(root: &Path) -> CliResult<Vec<WorkerInfo>> {
    let store = Store::open(root)?;
    let (live, stale): (Vec<WorkerInfo>, Vec<WorkerInfo>) = store
        .read(workers::list)?
        .into_iter()
        .filter(|w| w.status == "alive")
        .partition(|w| w.pid.is_none_or(pid_running));
    if !stale.is_empty() {
        store.write(|tx| stale.iter().try_for_each(|w| workers::deregister(tx, &w.id)))?;
    }
    Ok(live)
}

fn pid_running(pid: i64) -> bool {
    // Signal 0 only checks that the process exists.
    unsafe { libc::kill(pid as libc::pid_t, 0) == 0 }
}

fn signal(pid: i64, sig: libc::c_int) {
    unsafe {
        libc::kill(pid as libc::pid_t, sig);
    }
}

fn spawn(root: &Path) -> CliResult<u32> {
    let exe = std::env::current_exe().map_err(|e| domain(e.to_string()))?;
    let logs = root.join("daemon");
    std::fs::create_dir_all(&logs).map_err(|e| domain(e.to_string()))?;
    let log = OpenOptions::new().create(true).append(true).open(logs.join("workers.log")).map_err(|e| domain(e.to_string()))?;
    let err = log.try_clone().map_err(|e| domain(e.to_string()))?;
    let child = Command::new(exe)
        .arg("--store")
        .arg(root)
        .arg("worker")
        .stdin(Stdio::null())
        .stdout(log)
        .stderr(err)
        .spawn()
        .map_err(|e| domain(format!("cannot start a worker: {e}")))?;
    Ok(child.id())
}

/// Starts or stops workers until `n` are alive.
pub fn scale(root: &Path, n: usize) -> CliResult {
    let current = alive(root)?;
    if current.len() < n {
        let pids: Vec<u32> = (current.len()..n).map(|_| spawn(root)).collect::<CliResult<_>>()?;
        let deadline = Instant::now() + START_TIMEOUT;
        loop {
            let up = alive(root)?.len();
            if up >= n {
                break;
            }
            if Instant::now() >= deadline {
                return Err(domain(format!("only {up} of {n} workers came up; see {}", root.join("daemon/workers.log").display())));
            }
            if pids.iter().all(|&p| !pid_running(p as i64)) {
                return Err(domain(format!("workers exited at start; see {}", root.join("daemon/workers.log").display())));
            }
            thread::sleep(Duration::from_millis(50));
        }
    } else if current.len() > n {
        stop_workers(root, &current[n..])?;
    }
    Ok(())
}

/// Stops every live worker; returns their ids.
pub fn stop(root: &Path) -> CliResult<Vec<String>> {
    let current = alive(root)?;
    stop_workers(root, &current)?;
    Ok(current.into_iter().map(|w| w.id).collect())
}

fn stop_workers(root: &Path, which: &[WorkerInfo]) -> CliResult {
    let pids: Vec<i64> = which.iter().filter_map(|w| w.pid).filter(|&p| p != std::process::id() as i64).collect();
    for &p in &pids {
        signal(p, libc::SIGTERM);
    }
    let deadline = Instant::now() + STOP_TIMEOUT;
    while pids.iter().any(|&p| pid_running(p)) && Instant::now() < deadline {
        reap_children();
        thread::sleep(Duration::from_millis(50));
    }
    for &p in pids.iter().filter(|&&p| pid_running(p)) {
        signal(p, libc::SIGKILL);
    }
    reap_children();
    // Workers that died without deregistering are marked by the reaper of
    // any surviving worker; with none left, record them here.
    let store = Store::open(root)?;
    store.write(|tx| {
        for w in which {
            if workers::is_alive(tx, &w.id)? {
                workers::deregister(tx, &w.id)?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

/// Collects exited children so they do not linger as zombies.
fn reap_children() {
    loop {
        let r = unsafe { libc::waitpid(-1, std::ptr::null_mut(), libc::WNOHANG) };
        if r <= 0 {
            break;
        }
    }
}
