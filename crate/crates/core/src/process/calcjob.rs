//! Calculation jobs: calculations executed on a computer through a
//! transport and a batch scheduler.
//!
//! `prepare` turns the inputs into raw input files, resources and a
//! retrieve list; it runs when the node is created, so the files (and the
//! submit script) are part of the node's repository and hash. The engine
//! then walks the job through upload, submit, update, retrieve and parse;
//! each stage is checkpointed, and each interaction with the computer can
//! fail transiently and be retried with backoff.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use crate::engine::backoff::Fault;
use crate::error::{Error, Result};
use crate::graph::{Link, LinkType};
use crate::kind::NodeKind;
use crate::node::Node;
use crate::store::Tx;

use super::scheduler::SchedulerAdapter;
use super::transport::{Transport, DEFAULT_COMPUTER};
use super::{Inputs, Outputs};

pub const SUBMIT_SCRIPT: &str = "_submit.sh";
/// Exit code when the parser finds no output file to read.
pub const EXIT_MISSING_OUTPUT: i64 = 300;
/// Exit code when the output file cannot be interpreted.
pub const EXIT_UNPARSABLE_OUTPUT: i64 = 310;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    /// Seconds.
    pub walltime: u64,
    pub cores: u32,
}

impl Default for Resources {
    fn default() -> Self {
        Resources { walltime: 3600, cores: 1 }
    }
}

/// Everything `prepare` decides about a job.
#[derive(Debug, Clone, PartialEq)]
pub struct CalcInfo {
    pub files: BTreeMap<String, Vec<u8>>,
    pub executable: String,
    pub stdin: Option<String>,
    pub stdout: Option<String>,
    pub resources: Resources,
    pub retrieve: Vec<String>,
}

/// What the parser made of the retrieved files.
#[derive(Debug, Clone, Default)]
pub struct ParseResult {
    pub outputs: Outputs,
    pub exit_code: i64,
    pub message: Option<String>,
}

impl ParseResult {
    pub fn fail(exit_code: i64, message: &str) -> Self {
        ParseResult { outputs: Outputs::new(), exit_code, message: Some(message.to_string()) }
    }
}

pub type PrepareFn = Arc<dyn Fn(&Inputs) -> Result<CalcInfo, String> + Send + Sync>;
pub type ParseFn = Arc<dyn Fn(&BTreeMap<String, Vec<u8>>) -> ParseResult + Send + Sync>;

#[derive(Clone)]
pub struct CalcJobDef {
    pub prepare: PrepareFn,
    pub parser: String,
    pub parse: ParseFn,
}

impl CalcJobDef {
    pub fn new(
        parser: &str,
        prepare: impl Fn(&Inputs) -> Result<CalcInfo, String> + Send + Sync + 'static,
        parse: impl Fn(&BTreeMap<String, Vec<u8>>) -> ParseResult + Send + Sync + 'static,
    ) -> Self {
        CalcJobDef { prepare: Arc::new(prepare), parser: parser.to_string(), parse: Arc::new(parse) }
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "'\\''"))
}

/// The submit script: scheduler directives, then the command line.
pub fn render_script(info: &CalcInfo) -> String {
    let mut cmd = quote(&info.executable);
    if let Some(i) = &info.stdin {
        cmd.push_str(&format!(" < {}", quote(i)));
    }
    if let Some(o) = &info.stdout {
        cmd.push_str(&format!(" > {}", quote(o)));
    }
    format!(
        "#!/bin/bash\n#PSEUDO walltime={}\n#PSEUDO cores={}\n\n{}\n",
        info.resources.walltime, info.resources.cores, cmd
    )
}

/// `#PSEUDO key=value` directives of a submit script.
pub fn parse_directives(script: &str) -> BTreeMap<String, String> {
    script
        .lines()
        .filter_map(|l| l.strip_prefix("#PSEUDO "))
        .filter_map(|d| d.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Runs `prepare` and writes the input files and submit script into the
/// (unstored) process node.
pub(crate) fn prepare_node(node: &mut Node, job: &CalcJobDef, inputs: &Inputs) -> Result<()> {
    let info = (job.prepare)(inputs).map_err(Error::Spec)?;
    let computer = inputs
        .get("code")
        .and_then(|c| c.computer().map(str::to_string))
        .unwrap_or_else(|| DEFAULT_COMPUTER.to_string());
    for (path, bytes) in &info.files {
        node.put_file(path, bytes.clone())?;
    }
    node.put_file(SUBMIT_SCRIPT, render_script(&info).into_bytes())?;
    node.set_attribute("resources", json!({"walltime": info.resources.walltime, "cores": info.resources.cores}))?;
    node.set_attribute("retrieve_list", json!(info.retrieve))?;
    node.set_attribute("parser", json!(job.parser))?;
    *node = std::mem::replace(node, Node::new(NodeKind::builtin(NodeKind::CALCJOB))).with_computer(computer);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Upload,
    Submit,
    Update,
    Retrieve,
    Parse,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Upload => "upload",
            Stage::Submit => "submit",
            Stage::Update => "update",
            Stage::Retrieve => "retrieve",
            Stage::Parse => "parse",
        }
    }
}

/// Persistent state of a calculation job between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalcJobState {
    pub stage: Stage,
    pub job_id: Option<String>,
    /// Consecutive transient failures of the current stage.
    pub failures: u32,
    /// Whether the cache was consulted already.
    pub cache_checked: bool,
}

impl Default for CalcJobState {
    fn default() -> Self {
        CalcJobState { stage: Stage::Upload, job_id: None, failures: 0, cache_checked: false }
    }
}

/// Working directory of a job inside the computer's work tree.
pub fn workdir(uuid: Uuid) -> String {
    uuid.to_string()
}

/// Copies the node's input files and submit script to the computer.
pub(crate) fn upload(transport: &dyn Transport, uuid: Uuid, files: &BTreeMap<String, Vec<u8>>) -> Result<(), Fault> {
    let dir = workdir(uuid);
    for (path, bytes) in files {
        transport.put_file(&format!("{dir}/{path}"), bytes)?;
    }
    Ok(())
}

/// Submits the job, adopting one already submitted for this node (a worker
/// may have died between submitting and recording the job id).
pub(crate) fn submit(transport: &dyn Transport, scheduler: &dyn SchedulerAdapter, uuid: Uuid) -> Result<String, Fault> {
    if let Some(id) = scheduler.find(transport, &workdir(uuid))? {
        return Ok(id);
    }
    scheduler.submit(transport, &workdir(uuid), SUBMIT_SCRIPT)
}

/// Fetches the files of the retrieve list that exist.
pub(crate) fn retrieve(
    transport: &dyn Transport,
    uuid: Uuid,
    retrieve_list: &[String],
) -> Result<BTreeMap<String, Vec<u8>>, Fault> {
    let dir = workdir(uuid);
    let mut out = BTreeMap::new();
    for name in retrieve_list {
        if let Some(bytes) = transport.get_file(&format!("{dir}/{name}"))? {
            out.insert(name.clone(), bytes);
        }
    }
    Ok(out)
}

/// Records the remote working directory as a `data.remote` output.
pub(crate) fn attach_remote(tx: &Tx<'_>, uuid: Uuid, computer: &str, job_id: &str) -> Result<()> {
    let mut remote = Node::new(NodeKind::builtin(NodeKind::REMOTE)).with_computer(computer);
    remote.set_attribute("remote_path", json!(workdir(uuid)))?;
    remote.set_attribute("job_id", json!(job_id))?;
    tx.store_node(&mut remote)?;
    tx.insert_link(&Link::new(uuid, remote.uuid(), LinkType::Create, "remote_folder")?)?;
    Ok(())
}

/// Stores the retrieved files as a `data.folder` output.
pub(crate) fn attach_retrieved(tx: &Tx<'_>, uuid: Uuid, files: &BTreeMap<String, Vec<u8>>) -> Result<()> {
    let mut folder = Node::new(NodeKind::builtin(NodeKind::FOLDER));
    for (path, bytes) in files {
        folder.put_file(path, bytes.clone())?;
    }
    tx.store_node(&mut folder)?;
    tx.insert_link(&Link::new(uuid, folder.uuid(), LinkType::Create, "retrieved")?)?;
    Ok(())
}

/// Runs the parser over the retrieved folder and links its outputs.
/// Returns the exit code and message.
pub(crate) fn parse_outputs(tx: &Tx<'_>, job: &CalcJobDef, uuid: Uuid) -> Result<(i64, Option<String>)> {
    let folder = tx
        .links_from(uuid)?
        .into_iter()
        .find(|l| l.link.link_type == LinkType::Create && l.link.label.as_str() == "retrieved")
        .map(|l| l.link.target);
    let mut files = BTreeMap::new();
    if let Some(folder) = folder {
        let node = tx.get_node_with_contents(folder)?;
        for (path, f) in node.files() {
            files.insert(path.clone(), f.content.clone().unwrap_or_default());
        }
    }
    let result = (job.parse)(&files);
    for (name, mut node) in result.outputs {
        if node.is_stored() {
            return Err(Error::CreateViolation(format!("parser output `{name}` is an existing node")));
        }
        tx.store_node(&mut node)?;
        tx.insert_link(&Link::new(uuid, node.uuid(), LinkType::Create, &name)?)?;
    }
    Ok((result.exit_code, result.message))
}
