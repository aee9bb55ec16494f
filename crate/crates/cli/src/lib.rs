//! The `provflow` command line. Every command is a thin shell over a
//! library call; `--json` switches the line-oriented output to structured
//! documents.

pub mod daemon;
pub mod profile;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use provflow::bench::{self, EngineBench, Workers};
use provflow::caching::CachingConfig;
use provflow::engine::{events, Mode};
use provflow::process::{inputs_of, outputs_of};
use provflow::query::{ancestors_of, descendants_of, QueryPlan};
use provflow::{Engine, Inputs, Node, ProcessState, Registry, Store, TcMode};
use serde_json::{json, Value};
use uuid::Uuid;

use profile::{config_dir, ConfigFile, Profile};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit code 2.
    Usage(String),
    /// The command ran and failed: exit code 1.
    Domain(String),
}

impl From<provflow::Error> for CliError {
    fn from(e: provflow::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn domain(msg: impl Into<String>) -> CliError {
    CliError::Domain(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "provflow", version, about = "Provenance-first workflow engine")]
pub struct Cli {
    /// Profile to use; defaults to the configured default profile.
    #[arg(long, global = true, env = "PROFILE")]
    pub profile: Option<String>,
    /// Store directory, bypassing profiles.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Print structured documents instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Manage profiles.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Start, stop, inspect and scale daemon workers.
    #[command(subcommand)]
    Daemon(DaemonCmd),
    /// Run one daemon worker in the foreground until SIGTERM or SIGINT.
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        id: Option<String>,
    },
    /// Inspect and control processes.
    #[command(subcommand)]
    Process(ProcessCmd),
    /// Run a process in this process and wait for it.
    Run(RunArgs),
    /// Hand a process to the daemon.
    Submit(RunArgs),
    /// Inspect nodes.
    #[command(subcommand)]
    Node(NodeCmd),
    /// Run a serialized query plan and print tab-separated rows.
    Query { plan: PathBuf },
    /// Exchange graphs between stores.
    #[command(subcommand)]
    Archive(ArchiveCmd),
    /// Performance experiments.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Serve the HTTP API.
    Rest {
        /// Defaults to the profile's port.
        #[arg(long = "rest-port", alias = "port")]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Disable the POST control endpoints.
        #[arg(long)]
        read_only: bool,
        /// Allowed CORS origin; repeatable. Any origin when absent.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum ProfileCmd {
    /// Create or update a profile.
    Setup {
        name: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        rest_port: Option<u16>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum)]
        caching: Option<OnOff>,
        /// Make it the default profile.
        #[arg(long)]
        default: bool,
    },
    /// List profiles, marking the default.
    List,
    /// Print the selected profile.
    Show,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Event,
    Polling,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Event => Mode::Event,
            ModeArg::Polling => Mode::Polling,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum DaemonCmd {
    /// Start workers for the profile's store.
    Start {
        /// Defaults to the profile's worker count.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        poll_interval: Option<f64>,
        /// Seconds between heartbeats.
        #[arg(long)]
        heartbeat: Option<f64>,
    },
    /// Stop every live worker.
    Stop,
    /// Workers, heartbeats and queue depth.
    Status,
    /// Start or stop workers until this many are alive.
    Scale { workers: usize },
}

#[derive(Debug, Subcommand)]
pub enum ProcessCmd {
    /// Processes with their state, optionally of one state only.
    List {
        #[arg(long)]
        state: Option<String>,
    },
    /// Status of one process.
    Show { uuid: String },
    /// Pause a process through its owning worker.
    Pause { uuid: String },
    /// Resume a paused process.
    Play { uuid: String },
    /// Kill a process and its live children.
    Kill { uuid: String },
    /// State transitions, retries and messages of a process.
    Report { uuid: String },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Process id or alias, e.g. `fibonacci`.
    pub process: String,
    /// Input as name=value; values are JSON literals, bare words are
    /// strings, `@UUID` refers to a stored node.
    #[arg(long = "in", value_name = "NAME=VALUE")]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Direction {
    Ancestors,
    Descendants,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum NodeCmd {
    /// Summary, attributes, extras and files of a node.
    Show { uuid: String },
    /// Ancestors and descendants over data provenance.
    Graph {
        uuid: String,
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, value_enum, default_value = "both")]
        direction: Direction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ArchiveCmd {
    /// Write every node, link and file to an archive.
    Export { file: PathBuf },
    /// Merge an archive, skipping nodes already present.
    Import { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum StrategyArg {
    Otf,
    Table,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Descendants of 50 roots in N disjoint trees, per closure strategy.
    Tc {
        /// Tree counts; comma-separated for a sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 200, 400])]
        trees: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        breadth: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, value_enum, default_value = "both")]
        strategy: StrategyArg,
        #[arg(long, default_value = "tc_bench.csv")]
        csv: PathBuf,
        /// Scratch directory for the generated stores.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Reference work chains through the engine.
    Engine {
        #[arg(long, default_value_t = 400)]
        workchains: usize,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, value_enum, default_value = "event")]
        mode: ModeArg,
        #[arg(long, default_value_t = 5.0)]
        poll_interval: f64,
        /// Use the running daemon of the profile instead of in-process workers.
        #[arg(long)]
        external: bool,
        #[arg(long, default_value = "engine_bench.csv")]
        csv: PathBuf,
        /// Store for in-process runs; a fresh scratch store when absent.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 900.0)]
        timeout: f64,
    },
}

struct Ctx {
    json: bool,
    profile_name: Option<String>,
    store_override: Option<PathBuf>,
}

impl Ctx {
    fn profile(&self) -> CliResult<(String, Profile)> {
        let dir = config_dir();
        let mut cfg = ConfigFile::load(&dir).map_err(domain)?;
        let (name, mut p) = cfg.resolve(&dir, self.profile_name.as_deref()).map_err(domain)?;
        if let Some(s) = &self.store_override {
            p.store = s.clone();
        }
        Ok((name, p))
    }

    fn root(&self) -> CliResult<PathBuf> {
        match &self.store_override {
            Some(s) => Ok(s.clone()),
            None => Ok(self.profile()?.1.store),
        }
    }

    fn store(&self) -> CliResult<Store> {
        Ok(Store::open(self.root()?)?)
    }

    fn engine(&self) -> CliResult<Engine> {
        Ok(Engine::open(self.root()?, Arc::new(Registry::with_builtins()))?)
    }

    /// Prints `doc` as JSON, or `text` otherwise.
    fn emit(&self, doc: Value, text: impl FnOnce() -> String) {
        // A closed pipe (`| head`) is not an error.
        let mut out = std::io::stdout().lock();
        if self.json {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json value"));
        } else {
            let t = text();
            if !t.is_empty() {
                let _ = writeln!(out, "{}", t.trim_end_matches('\n'));
            }
        }
    }
}

pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(m) | CliError::Domain(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let ctx = Ctx { json: cli.json, profile_name: cli.profile, store_override: cli.store };
    match cli.command {
        Command::Profile(c) => profile_cmd(&ctx, c),
        Command::Daemon(c) => daemon_cmd(&ctx, c),
        Command::Worker { id } => daemon::serve_worker(&ctx.root()?, id),
        Command::Process(c) => process_cmd(&ctx, c),
        Command::Run(a) => run_cmd(&ctx, a, false),
        Command::Submit(a) => run_cmd(&ctx, a, true),
        Command::Node(c) => node_cmd(&ctx, c),
        Command::Query { plan } => query_cmd(&ctx, &plan),
        Command::Archive(c) => archive_cmd(&ctx, c),
        Command::Bench(c) => bench_cmd(&ctx, c),
        Command::Rest { port, host, read_only, cors_origins } => {
            let (_, p) = ctx.profile()?;
            let port = port.unwrap_or(p.rest_port);
            let addr = format!("{host}:{port}").parse().map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
            let options = provflow_rest::Options { allow_control: !read_only, cors_origins, ..Default::default() };
            let rt = tokio::runtime::Runtime::new().map_err(|e| domain(e.to_string()))?;
            eprintln!("serving {} on http://{addr}/api/v1", p.store.display());
            rt.block_on(provflow_rest::serve(p.store, addr, options))?;
            Ok(())
        }
    }
}

fn profile_cmd(ctx: &Ctx, c: ProfileCmd) -> CliResult {
    let dir = config_dir();
    let mut cfg = ConfigFile::load(&dir).map_err(domain)?;
    match c {
        ProfileCmd::Setup { name, store, rest_port, workers, caching, default } => {
            let store = std::path::absolute(&store).map_err(|e| domain(e.to_string()))?;
            let mut p = cfg.profiles.get(&name).cloned().unwrap_or_else(|| Profile::new(store.clone()));
            p.store = store;
            if let Some(port) = rest_port {
                p.rest_port = port;
            }
            if let Some(w) = workers {
                p.workers = w;
            }
            if let Some(c) = caching {
                p.caching = match c {
                    OnOff::On => CachingConfig::on(),
                    OnOff::Off => CachingConfig::default(),
                };
            }
            Store::open(&p.store)?;
            cfg.profiles.insert(name.clone(), p.clone());
            if default || cfg.default_profile.is_none() {
                cfg.default_profile = Some(name.clone());
            }
            cfg.save(&dir).map_err(domain)?;
            ctx.emit(json!({"name": name, "profile": p}), || format!("profile `{name}` stored at {}", p.store.display()));
        }
        ProfileCmd::List => {
            let default = cfg.default_profile.clone();
            ctx.emit(json!({"default": default, "profiles": cfg.profiles}), || {
                cfg.profiles
                    .iter()
                    .map(|(n, p)| {
                        let mark = if default.as_deref() == Some(n) { "*" } else { " " };
                        format!("{mark} {n}\t{}\n", p.store.display())
                    })
                    .collect()
            });
        }
        ProfileCmd::Show => {
            let (name, p) = ctx.profile()?;
            ctx.emit(json!({"name": name, "profile": p}), || {
                format!(
                    "name: {name}\nstore: {}\nrest port: {}\nworkers: {}\ncaching: {}",
                    p.store.display(),
                    p.rest_port,
                    p.workers,
                    serde_json::to_string(&p.caching).expect("json value")
                )
            });
        }
    }
    Ok(())
}

fn daemon_cmd(ctx: &Ctx, c: DaemonCmd) -> CliResult {
    let (_, profile) = ctx.profile()?;
    let root = profile.store.clone();
    match c {
        DaemonCmd::Start { workers, mode, poll_interval, heartbeat } => {
            let mut eng = Engine::open(&root, Arc::new(Registry::with_builtins()))?;
            if eng.daemon_status()?.alive > 0 {
                eprintln!("daemon already running");
                return daemon_status(ctx, &eng);
            }
            let mut config = eng.config().clone();
            config.caching = profile.caching.clone();
            if let Some(m) = mode {
                config.mode = m.into();
            }
            if let Some(s) = poll_interval {
                config.poll_interval = s;
            }
            if let Some(h) = heartbeat {
                config.heartbeat = h;
            }
            eng.configure(config)?;
            daemon::scale(&root, workers.unwrap_or(profile.workers))?;
            daemon_status(ctx, &eng)
        }
        DaemonCmd::Stop => {
            let stopped = daemon::stop(&root)?;
            ctx.emit(json!({"stopped": stopped}), || format!("stopped {} workers", stopped.len()));
            Ok(())
        }
        DaemonCmd::Status => daemon_status(ctx, &Engine::open(&root, Arc::new(Registry::with_builtins()))?),
        DaemonCmd::Scale { workers } => {
            daemon::scale(&root, workers)?;
            daemon_status(ctx, &Engine::open(&root, Arc::new(Registry::with_builtins()))?)
        }
    }
}

fn daemon_status(ctx: &Ctx, eng: &Engine) -> CliResult {
    let st = eng.daemon_status()?;
    ctx.emit(serde_json::to_value(&st).expect("json value"), || {
        let mut out = String::new();
        if st.alive == 0 {
            out.push_str("not running\n");
        } else {
            out.push_str(&format!("{} workers alive\n", st.alive));
        }
        for w in st.workers.iter().filter(|w| w.status != "stopped") {
            let pid = w.pid.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{}\t{}\tpid {pid}\theartbeat {:.1}s ago\tholding {}\n", w.id, w.status, w.heartbeat_age, w.claimed));
        }
        out.push_str(&format!("queue: {} ready, {} claimed, {} parked", st.queue.ready, st.queue.claimed, st.queue.parked));
        out
    });
    Ok(())
}

fn parse_uuid(s: &str) -> CliResult<Uuid> {
    Uuid::parse_str(s).map_err(|_| domain(format!("not a uuid: `{s}`")))
}

fn process_doc(st: &provflow::engine::ProcessStatus) -> Value {
    serde_json::to_value(st).expect("json value")
}

fn process_line(st: &provflow::engine::ProcessStatus) -> String {
    let mut line = format!("{}\t{}\t{}", st.uuid, st.process_type, st.state);
    if let Some(code) = st.exit_code {
        line.push_str(&format!("\t[{code}]"));
    }
    if let Some(reason) = &st.pause_reason {
        line.push_str(&format!("\t({reason})"));
    }
    line
}

fn process_cmd(ctx: &Ctx, c: ProcessCmd) -> CliResult {
    let eng = ctx.engine()?;
    match c {
        ProcessCmd::List { state } => {
            let state = state.as_deref().map(ProcessState::from_str).transpose().map_err(|e| CliError::Usage(e.to_string()))?;
            let rows = eng.list(state)?;
            ctx.emit(Value::Array(rows.iter().map(process_doc).collect()), || rows.iter().map(|r| process_line(r) + "\n").collect());
        }
        ProcessCmd::Show { uuid } => {
            let u = parse_uuid(&uuid)?;
            let st = eng.status(u)?;
            let (inputs, outputs) = eng.store().read(|tx| Ok((inputs_of(tx, u)?, outputs_of(tx, u)?)))?;
            let ports = |m: &BTreeMap<String, Node>| -> Value {
                m.iter().map(|(k, n)| (k.clone(), n.summary())).collect::<serde_json::Map<_, _>>().into()
            };
            let doc = json!({"status": process_doc(&st), "inputs": ports(&inputs), "outputs": ports(&outputs)});
            ctx.emit(doc, || {
                let mut out = process_line(&st) + "\n";
                if let Some(e) = &st.exception {
                    out.push_str(&format!("exception: {e}\n"));
                }
                for (title, m) in [("inputs", &inputs), ("outputs", &outputs)] {
                    out.push_str(&format!("{title}:\n"));
                    for (k, n) in m {
                        out.push_str(&format!("  {k}\t{}\t{}\t{}\n", n.uuid(), n.kind(), short_value(n)));
                    }
                }
                out
            });
        }
        ProcessCmd::Pause { uuid } => control(ctx, &eng, &uuid, provflow::Action::Pause)?,
        ProcessCmd::Play { uuid } => control(ctx, &eng, &uuid, provflow::Action::Play)?,
        ProcessCmd::Kill { uuid } => control(ctx, &eng, &uuid, provflow::Action::Kill)?,
        ProcessCmd::Report { uuid } => {
            let u = parse_uuid(&uuid)?;
            eng.status(u)?;
            let history = eng.store().read(|tx| events::history(tx, u))?;
            let report = eng.report(u)?;
            let doc = json!({"history": history, "report": report});
            ctx.emit(doc, || {
                report.iter().map(|r| format!("{:.3}\t{}\t{}\n", r.at, r.category, r.message)).collect()
            });
        }
    }
    Ok(())
}

fn control(ctx: &Ctx, eng: &Engine, uuid: &str, action: provflow::Action) -> CliResult {
    let st = eng.rpc(parse_uuid(uuid)?, action)?;
    ctx.emit(process_doc(&st), || process_line(&st));
    Ok(())
}

/// Scalar value of a data node, or its kind for anything else.
fn short_value(n: &Node) -> String {
    match n.attributes().get("value") {
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None if n.kind().is_data() => Value::Object(n.attributes().clone()).to_string(),
        None => String::new(),
    }
}

/// A `--in` value: JSON literal, bare string, or `@UUID`.
pub fn parse_input_value(store: &Store, text: &str) -> CliResult<Node> {
    if let Some(u) = text.strip_prefix('@') {
        return Ok(store.get_node(parse_uuid(u)?)?);
    }
    let v = match serde_json::from_str::<Value>(text) {
        Ok(v) => v,
        Err(_) if text.starts_with(['"', '[', '{']) => return Err(CliError::Usage(format!("bad literal `{text}`"))),
        Err(_) => Value::String(text.to_string()),
    };
    Ok(match v {
        Value::Bool(b) => Node::bool(b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => Node::int(i),
            None => Node::float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => Node::str(s),
        Value::Array(items) => Node::list(items),
        Value::Object(_) => Node::dict(v)?,
        Value::Null => return Err(CliError::Usage("null is not a node value".into())),
    })
}

/// Maps `name=value` pairs onto the process's input ports; names match
/// exactly, else case-insensitively when that is unambiguous.
pub fn parse_inputs(store: &Store, registry: &Registry, process: &str, pairs: &[String]) -> CliResult<Inputs> {
    let def = registry.get(process)?;
    let mut inputs = Inputs::new();
    for pair in pairs {
        let (name, value) = pair.split_once('=').ok_or_else(|| CliError::Usage(format!("expected NAME=VALUE, got `{pair}`")))?;
        let port = if def.spec.inputs.contains_key(name) {
            name.to_string()
        } else {
            let folded: Vec<&String> = def.spec.inputs.keys().filter(|k| k.eq_ignore_ascii_case(name)).collect();
            match folded.as_slice() {
                [one] => (*one).clone(),
                _ => name.to_string(),
            }
        };
        inputs.insert(port, parse_input_value(store, value)?);
    }
    Ok(inputs)
}

fn run_cmd(ctx: &Ctx, a: RunArgs, submit: bool) -> CliResult {
    let (_, profile) = ctx.profile()?;
    let mut eng = ctx.engine()?;
    if eng.config().caching != profile.caching && ctx.store_override.is_none() {
        let config = provflow::EngineConfig { caching: profile.caching.clone(), ..eng.config().clone() };
        eng.configure(config)?;
    }
    let inputs = parse_inputs(eng.store(), eng.registry(), &a.process, &a.inputs)?;
    if submit {
        let u = eng.submit(&a.process, inputs)?;
        ctx.emit(json!({"uuid": u}), || format!("submitted {u}"));
        return Ok(());
    }
    let out = eng.run(&a.process, inputs)?;
    let doc = json!({
        "uuid": out.uuid,
        "state": out.state,
        "exit_code": out.exit_code,
        "exception": out.exception,
        "outputs": out.outputs.iter().map(|(k, n)| (k.clone(), json!({"uuid": n.uuid(), "kind": n.kind().as_str(), "attributes": n.attributes()}))).collect::<serde_json::Map<_, _>>(),
    });
    ctx.emit(doc, || {
        if out.outputs.len() == 1 {
            return out.outputs.values().map(short_value).collect();
        }
        out.outputs.iter().map(|(k, n)| format!("{k}\t{}\n", short_value(n))).collect()
    });
    if out.is_ok() {
        Ok(())
    } else {
        let why = out.exception.clone().unwrap_or_else(|| format!("exit code {}", out.exit_code.unwrap_or(-1)));
        Err(domain(format!("process {} {}: {why}", out.uuid, out.state)))
    }
}

fn node_cmd(ctx: &Ctx, c: NodeCmd) -> CliResult {
    let store = ctx.store()?;
    match c {
        NodeCmd::Show { uuid } => {
            let u = parse_uuid(&uuid)?;
            let n = store.get_node(u)?;
            let (inc, out) = store.read(|tx| Ok((tx.links_into(u)?, tx.links_from(u)?)))?;
            let link_doc = |l: &provflow::store::LinkRecord| {
                json!({"source": l.link.source, "target": l.link.target, "type": l.link.link_type.as_str(), "label": l.link.label.as_str()})
            };
            let mut doc = n.summary();
            doc["attributes"] = Value::Object(n.attributes().clone());
            doc["extras"] = Value::Object(n.extras().clone());
            doc["files"] = n.files().keys().cloned().collect();
            doc["incoming"] = inc.iter().map(link_doc).collect();
            doc["outgoing"] = out.iter().map(link_doc).collect();
            ctx.emit(doc, || {
                let mut s = format!("{}\t{}\t{}\n", n.uuid(), n.kind(), n.label());
                s.push_str(&format!("attributes: {}\n", Value::Object(n.attributes().clone())));
                s.push_str(&format!("extras: {}\n", Value::Object(n.extras().clone())));
                for f in n.files().keys() {
                    s.push_str(&format!("file: {f}\n"));
                }
                for l in &inc {
                    s.push_str(&format!("<- {}\t{}\t{}\n", l.link.link_type.as_str(), l.link.label.as_str(), l.link.source));
                }
                for l in &out {
                    s.push_str(&format!("-> {}\t{}\t{}\n", l.link.link_type.as_str(), l.link.label.as_str(), l.link.target));
                }
                s
            });
        }
        NodeCmd::Graph { uuid, depth, direction } => {
            let u = parse_uuid(&uuid)?;
            let mode = store.tc_mode();
            let (anc, desc) = store.read(|tx| {
                tx.require_node_id(u)?;
                let anc = match direction {
                    Direction::Descendants => BTreeMap::new(),
                    _ => ancestors_of(tx, u, mode, depth)?,
                };
                let desc = match direction {
                    Direction::Ancestors => BTreeMap::new(),
                    _ => descendants_of(tx, u, mode, depth)?,
                };
                let describe = |m: BTreeMap<Uuid, u32>| -> provflow::Result<Vec<(u32, Node)>> {
                    let mut v: Vec<(u32, Node)> = m.into_iter().map(|(u, d)| Ok((d, tx.get_node(u)?))).collect::<provflow::Result<_>>()?;
                    v.sort_by_key(|(d, n)| (*d, n.id()));
                    Ok(v)
                };
                Ok((describe(anc)?, describe(desc)?))
            })?;
            let rows = |v: &[(u32, Node)]| -> Value {
                v.iter().map(|(d, n)| json!({"depth": d, "uuid": n.uuid(), "kind": n.kind().as_str(), "label": n.label()})).collect()
            };
            ctx.emit(json!({"ancestors": rows(&anc), "descendants": rows(&desc)}), || {
                let mut s = String::new();
                for (title, v) in [("ancestors", &anc), ("descendants", &desc)] {
                    if matches!((title, direction), ("ancestors", Direction::Descendants) | ("descendants", Direction::Ancestors)) {
                        continue;
                    }
                    s.push_str(&format!("{title}: {}\n", v.len()));
                    for (d, n) in v {
                        s.push_str(&format!("  {d}\t{}\t{}\t{}\n", n.uuid(), n.kind(), n.label()));
                    }
                }
                s
            });
        }
    }
    Ok(())
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn query_cmd(ctx: &Ctx, plan: &Path) -> CliResult {
    let text = std::fs::read_to_string(plan).map_err(|e| CliError::Usage(format!("{}: {e}", plan.display())))?;
    // Opening the store first registers the data kinds it holds.
    let store = ctx.store()?;
    let plan = QueryPlan::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = store.read(|tx| provflow::query::all(tx, &plan))?;
    ctx.emit(json!(rows), || rows.iter().map(|r| r.iter().map(cell).collect::<Vec<_>>().join("\t") + "\n").collect());
    Ok(())
}

fn archive_cmd(ctx: &Ctx, c: ArchiveCmd) -> CliResult {
    let store = ctx.store()?;
    match c {
        ArchiveCmd::Export { file } => {
            store.export_archive(&file)?;
            let (n, l) = store.read(|tx| Ok((tx.count_nodes()?, tx.count_links()?)))?;
            ctx.emit(json!({"file": file, "nodes": n, "links": l}), || format!("exported {n} nodes and {l} links to {}", file.display()));
        }
        ArchiveCmd::Import { file } => {
            let s = store.import_archive(&file)?;
            let doc = json!({"nodes_added": s.nodes_added, "nodes_skipped": s.nodes_skipped, "links_added": s.links_added, "links_skipped": s.links_skipped});
            ctx.emit(doc, || {
                format!(
                    "imported {} nodes ({} already present) and {} links ({} already present)",
                    s.nodes_added, s.nodes_skipped, s.links_added, s.links_skipped
                )
            });
        }
    }
    Ok(())
}

/// A scratch directory removed on drop.
struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> CliResult<Scratch> {
        let p = std::env::temp_dir().join(format!("provflow-{tag}-{}-{}", std::process::id(), Uuid::new_v4().simple()));
        std::fs::create_dir_all(&p).map_err(|e| domain(e.to_string()))?;
        Ok(Scratch(p))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn bench_cmd(ctx: &Ctx, c: BenchCmd) -> CliResult {
    match c {
        BenchCmd::Tc { trees, breadth, depth, strategy, csv, dir } => {
            if let Some(n) = trees.iter().find(|&&n| n < bench::TC_ROOTS) {
                return Err(CliError::Usage(format!("--trees must be at least {}, got {n}", bench::TC_ROOTS)));
            }
            if breadth == 0 || depth == 0 {
                return Err(CliError::Usage("--breadth and --depth must be positive".into()));
            }
            let scratch;
            let dir = match dir {
                Some(d) => d,
                None => {
                    scratch = Scratch::new("tc")?;
                    scratch.0.clone()
                }
            };
            let mut rows = bench::tc_sweep(&dir, &trees, breadth, depth)?;
            rows.retain(|r| match strategy {
                StrategyArg::Both => true,
                StrategyArg::Otf => r.strategy == TcMode::Otf,
                StrategyArg::Table => r.strategy == TcMode::Table,
            });
            bench::write_tc_csv(&csv, &rows)?;
            ctx.emit(json!({"csv": csv, "rows": rows}), || {
                let mut s = String::from("N\tB\tD\tstrategy\tseconds\n");
                for r in &rows {
                    s.push_str(&format!("{}\t{}\t{}\t{}\t{:.6}\n", r.n, r.breadth, r.depth, r.strategy.as_str(), r.seconds));
                }
                s
            });
        }
        BenchCmd::Engine { workchains, workers, mode, poll_interval, external, csv, dir, timeout } => {
            let config = EngineBench {
                workchains,
                workers: if external { Workers::External } else { Workers::InProcess(workers) },
                mode: mode.into(),
                poll_interval,
                timeout: Duration::from_secs_f64(timeout),
            };
            let registry = Arc::new(Registry::with_builtins());
            let scratch;
            let root = if external {
                let root = ctx.root()?;
                let eng = Engine::open(&root, registry.clone())?;
                let st = eng.daemon_status()?;
                if st.alive == 0 {
                    return Err(domain("daemon is not running"));
                }
                if eng.config().mode != config.mode || (config.mode == Mode::Polling && eng.config().poll_interval != poll_interval) {
                    return Err(domain("the running daemon uses a different mode; restart it with `daemon start --mode ... --poll-interval ...`"));
                }
                root
            } else {
                match dir {
                    Some(d) => d,
                    None => {
                        scratch = Scratch::new("engine")?;
                        scratch.0.clone()
                    }
                }
            };
            let report = bench::engine(&root, registry, &config)?;
            bench::write_engine_csv(&csv, &report.samples)?;
            let summary = json!({
                "mode": report.mode,
                "workchains": report.workchains,
                "processes": report.processes,
                "wall_seconds": report.wall_seconds,
                "processes_per_hour": report.processes_per_hour,
                "longest_plateau": report.longest_plateau,
                "finished_ok": report.finished_ok,
                "graph_valid": report.graph_valid,
                "counts": bench::final_counts(&report),
                "csv": csv,
            });
            ctx.emit(summary, || {
                format!(
                    "mode {:?}: {} processes in {:.1} s ({:.0} per hour), longest plateau {:.2} s, {}/{} work chains finished ok, graph {}",
                    report.mode,
                    report.processes,
                    report.wall_seconds,
                    report.processes_per_hour,
                    report.longest_plateau,
                    report.finished_ok,
                    report.workchains,
                    if report.graph_valid { "valid" } else { "INVALID" }
                )
            });
            if report.finished_ok != report.workchains || !report.graph_valid {
                return Err(domain("benchmark run did not finish cleanly"));
            }
        }
    }
    Ok(())
}
