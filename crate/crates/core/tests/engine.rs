use std::sync::Arc;
use std::time::{Duration, Instant};

use provflow::engine::queue::{self, overlapping_assignments};
use provflow::engine::{Action, EngineConfig, EventFilter, ProcessState};
use provflow::process::builtins::{ADD_CHAIN, ADD_JOB, FIBONACCI, REFERENCE};
use provflow::process::calcjob::SUBMIT_SCRIPT;
use provflow::process::scheduler::{SimConfig, SimScheduler};
use provflow::process::transport::{set_fault, Computer};
use provflow::{Engine, Error, Inputs, LinkType, Node, NodeKind, Registry};

fn engine(dir: &std::path::Path, config: EngineConfig) -> Engine {
    let mut e = Engine::open(dir, Arc::new(Registry::with_builtins())).unwrap();
    e.configure(config).unwrap();
    e
}

fn fast() -> EngineConfig {
    EngineConfig { heartbeat: 0.2, tick: 0.01, ..EngineConfig::default() }
}

fn xyz(x: i64, y: i64, z: i64) -> Inputs {
    Inputs::from([("x".into(), Node::int(x)), ("y".into(), Node::int(y)), ("z".into(), Node::int(z))])
}

fn xy(x: i64, y: i64) -> Inputs {
    Inputs::from([("x".into(), Node::int(x)), ("y".into(), Node::int(y))])
}

fn localhost_dir(e: &Engine) -> std::path::PathBuf {
    Computer::local("localhost").dir(e.store().root())
}

fn wait_all(e: &Engine, uuids: &[uuid::Uuid], secs: u64) {
    let deadline = Instant::now() + Duration::from_secs(secs);
    for u in uuids {
        let left = deadline.saturating_duration_since(Instant::now());
        let st = e.wait(*u, left).unwrap();
        assert!(st.state.is_terminal(), "{u} still {}", st.state);
    }
}

#[test]
fn fibonacci_runs_locally_and_records_the_expected_graph() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    let out = e.run(FIBONACCI, Inputs::from([("n".into(), Node::int(5))])).unwrap();
    assert!(out.is_ok(), "{out:?}");
    assert_eq!(out.output("number").unwrap().as_i64(), Some(5));
    e.store()
        .read(|tx| {
            let calls: Vec<_> = tx.links_from(out.uuid)?.into_iter().filter(|l| l.link.link_type == LinkType::CallCalc).collect();
            assert_eq!(calls.len(), 4);
            let inputs: Vec<_> = tx.links_into(out.uuid)?.into_iter().filter(|l| l.link.link_type == LinkType::InputWork).collect();
            assert_eq!(inputs.len(), 1);
            assert_eq!(inputs[0].link.label.as_str(), "n");
            Ok(())
        })
        .unwrap();
}

#[test]
fn calcjob_runs_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    let out = e.run(ADD_JOB, xy(2, 3)).unwrap();
    assert!(out.is_ok(), "{out:?}");
    assert_eq!(out.output("sum").unwrap().as_i64(), Some(5));
    assert!(out.output("remote_folder").is_some());
    assert!(out.output("retrieved").is_some());
    let script = e.store().read_file(out.uuid, SUBMIT_SCRIPT).unwrap();
    assert!(String::from_utf8(script).unwrap().starts_with("#!/bin/bash\n#PSEUDO walltime="));
    assert_eq!(SimScheduler::executions(&localhost_dir(&e)), 1);
    let states: Vec<_> = e.report(out.uuid).unwrap().into_iter().filter(|r| r.category == "state").map(|r| r.message).collect();
    assert_eq!(states, ["created -> running", "running -> waiting", "waiting -> running", "running -> finished [exit code 0]"]);
}

#[test]
fn daemon_workers_finish_submitted_chains_without_double_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    let uuids: Vec<_> = (0..12).map(|i| e.submit(REFERENCE, xyz(i, 1, 2)).unwrap()).collect();
    let workers: Vec<_> = (0..3).map(|i| e.spawn_worker(&format!("w{i}")).unwrap()).collect();
    wait_all(&e, &uuids, 60);
    for (i, u) in uuids.iter().enumerate() {
        let out = e.outcome(*u).unwrap();
        assert!(out.is_ok(), "{out:?}");
        assert_eq!(out.output("result").unwrap().as_i64(), Some(i as i64 + 3));
    }
    assert_eq!(e.daemon_status().unwrap().alive, 3);
    for w in workers {
        w.stop().unwrap();
    }
    let status = e.daemon_status().unwrap();
    assert_eq!(status.alive, 0);
    assert_eq!(status.queue.claimed + status.queue.ready + status.queue.parked, 0);
    let log = e.store().read(queue::assignments).unwrap();
    assert!(overlapping_assignments(&log).is_empty());
    assert_eq!(SimScheduler::executions(&localhost_dir(&e)), 12);
}

#[test]
fn halted_worker_is_reaped_and_its_tasks_finish_elsewhere() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    let uuids: Vec<_> = (0..6).map(|i| e.submit(ADD_CHAIN, xyz(i, 1, 1)).unwrap()).collect();
    let doomed = e.spawn_worker("doomed").unwrap();
    std::thread::sleep(Duration::from_millis(150));
    doomed.halt();
    let survivor = e.spawn_worker("survivor").unwrap();
    wait_all(&e, &uuids, 60);
    for u in &uuids {
        assert!(e.outcome(*u).unwrap().is_ok());
    }
    let workers = e.daemon_status().unwrap().workers;
    assert_eq!(workers.iter().find(|w| w.id == "doomed").unwrap().status, "unreachable");
    survivor.stop().unwrap();
    assert!(overlapping_assignments(&e.store().read(queue::assignments).unwrap()).is_empty());
    assert_eq!(SimScheduler::executions(&localhost_dir(&e)), 12);
}

#[test]
fn transient_faults_are_retried_with_backoff() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), EngineConfig { backoff: provflow::engine::BackoffPolicy { initial: 0.05, multiplier: 2.0, max_failures: 5 }, ..fast() });
    set_fault(&localhost_dir(&e), Some("3")).unwrap();
    let out = e.run(ADD_JOB, xy(1, 1)).unwrap();
    assert!(out.is_ok());
    let retries = e.report(out.uuid).unwrap().into_iter().filter(|r| r.category == "retry").count();
    assert_eq!(retries, 3);
}

#[test]
fn exhausted_retries_pause_and_play_completes() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), EngineConfig { backoff: provflow::engine::BackoffPolicy { initial: 0.02, multiplier: 2.0, max_failures: 5 }, ..fast() });
    let computer = localhost_dir(&e);
    set_fault(&computer, Some("*")).unwrap();
    let job = e.submit(ADD_JOB, xy(20, 22)).unwrap();
    let w = e.spawn_worker("w").unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let st = e.status(job).unwrap();
        if st.state == ProcessState::Paused {
            assert_eq!(st.pause_reason.as_deref(), Some("max-retries"));
            break;
        }
        assert!(Instant::now() < deadline, "never paused");
        std::thread::sleep(Duration::from_millis(20));
    }
    let retries = e.report(job).unwrap().into_iter().filter(|r| r.category == "retry").count();
    assert_eq!(retries, 5);
    set_fault(&computer, None).unwrap();
    e.play(job).unwrap();
    let st = e.wait(job, Duration::from_secs(20)).unwrap();
    assert_eq!(st.state, ProcessState::Finished);
    assert_eq!(e.outcome(job).unwrap().output("sum").unwrap().as_i64(), Some(42));
    w.stop().unwrap();
}

#[test]
fn pause_play_and_kill_through_the_owning_worker() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    e.store()
        .write(|tx| {
            let mut c = Computer::local("slow");
            c.scheduler = SimConfig { queued_delay: 0.5, running_delay: 0.5, fail_ordinals: vec![] };
            c.save(tx)
        })
        .unwrap();
    let code = Node::code("slowbash", "slow", "bash");
    let mut inputs = xy(1, 2);
    inputs.insert("code".into(), code);
    let job = e.submit(ADD_JOB, inputs).unwrap();
    let w = e.spawn_worker("w").unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while e.status(job).unwrap().state != ProcessState::Waiting {
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(10));
    }
    let mut sub = e.subscribe(EventFilter::Process(job)).unwrap();
    assert_eq!(e.rpc(job, Action::Pause).unwrap().state, ProcessState::Paused);
    assert!(e.checkpoint(job).unwrap().is_some());
    assert_eq!(e.rpc(job, Action::Play).unwrap().state, ProcessState::Waiting);
    let killed = e.kill(job).unwrap();
    assert_eq!(killed.state, ProcessState::Killed);
    assert!(matches!(e.kill(job), Err(Error::Terminal(_))));
    let seen: Vec<_> = sub.poll().unwrap().into_iter().map(|ev| ev.new_state).collect();
    assert_eq!(seen, [ProcessState::Paused, ProcessState::Waiting, ProcessState::Killed]);
    w.stop().unwrap();
}

#[test]
fn kill_propagates_to_children() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    e.store()
        .write(|tx| {
            let mut c = Computer::local("localhost");
            c.scheduler = SimConfig { queued_delay: 30.0, running_delay: 0.0, fail_ordinals: vec![] };
            c.save(tx)
        })
        .unwrap();
    let chain = e.submit(ADD_CHAIN, xyz(1, 2, 3)).unwrap();
    let w = e.spawn_worker("w").unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let child = loop {
        let kids = e.list(Some(ProcessState::Waiting)).unwrap();
        if let Some(k) = kids.into_iter().find(|p| p.caller == Some(chain)) {
            break k.uuid;
        }
        assert!(Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(10));
    };
    e.kill(chain).unwrap();
    let st = e.wait(child, Duration::from_secs(10)).unwrap();
    assert_eq!(st.state, ProcessState::Killed);
    assert_eq!(e.status(chain).unwrap().state, ProcessState::Killed);
    w.stop().unwrap();
}

#[test]
fn caching_skips_execution_and_reruns_only_the_failed_job() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fast();
    config.caching = provflow::caching::CachingConfig::on();
    let e = engine(dir.path(), config);
    let computer = localhost_dir(&e);
    let first = e.run(ADD_JOB, xy(4, 5)).unwrap();
    let second = e.run(ADD_JOB, xy(4, 5)).unwrap();
    assert_eq!(SimScheduler::executions(&computer), 1);
    assert_eq!(second.output("sum").unwrap().as_i64(), Some(9));
    assert_ne!(second.output("sum").unwrap().uuid(), first.output("sum").unwrap().uuid());
    let source = e.store().get_node(second.uuid).unwrap();
    assert_eq!(source.extras().get("_cache_source").and_then(|v| v.as_str()), Some(first.uuid.to_string().as_str()));

    // Second job of the chain fails at the scheduler; after the fix only it reruns.
    e.store()
        .write(|tx| {
            let mut c = Computer::local("localhost");
            c.scheduler = SimConfig { queued_delay: 0.0, running_delay: 0.0, fail_ordinals: vec![3] };
            c.save(tx)
        })
        .unwrap();
    let broken = e.run(ADD_CHAIN, xyz(7, 8, 9)).unwrap();
    assert_eq!(broken.exit_code, Some(400));
    assert_eq!(SimScheduler::executions(&computer), 2);
    e.store().write(|tx| Computer::local("localhost").save(tx)).unwrap();
    let fixed = e.run(ADD_CHAIN, xyz(7, 8, 9)).unwrap();
    assert!(fixed.is_ok(), "{fixed:?}");
    assert_eq!(fixed.output("result").unwrap().as_i64(), Some(24));
    assert_eq!(SimScheduler::executions(&computer), 3);
}

#[test]
fn steps_resume_from_checkpoints_after_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), fast());
    let chains: Vec<_> = (0..4).map(|i| e.submit(FIBONACCI, Inputs::from([("n".into(), Node::int(10 + i))])).unwrap()).collect();
    let w = e.spawn_worker("first").unwrap();
    std::thread::sleep(Duration::from_millis(30));
    w.stop().unwrap();
    let w = e.spawn_worker("second").unwrap();
    wait_all(&e, &chains, 30);
    w.stop().unwrap();
    let expected = [55, 89, 144, 233];
    for (u, want) in chains.iter().zip(expected) {
        assert_eq!(e.outcome(*u).unwrap().output("number").unwrap().as_i64(), Some(want));
    }
    // Every step ran exactly once.
    let log = e.store().read(provflow::engine::step_log).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for r in &log {
        assert!(seen.insert((r.process_uuid, r.ordinal)), "step {} of {} ran twice", r.ordinal, r.process_uuid);
    }
    // initialize + (n - 1) iterations + results, plus the final predicate-only activation.
    assert_eq!(log.len(), (10..14).map(|n| n as usize + 1).sum::<usize>());
    let kinds = e.store().read(|tx| tx.nodes(Some(&NodeKind::builtin(NodeKind::WORKCHAIN)))).unwrap();
    assert_eq!(kinds.len(), 4);
}
