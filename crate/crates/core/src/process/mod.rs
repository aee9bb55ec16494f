//! The four process flavors and the registry that names them.
//!
//! A process definition pairs a [`ProcessSpec`] with a body: a calculation
//! function, a work function, a work chain (steps plus outline) or a
//! calculation job (prepare plus parser). Definitions are registered under a
//! stable string id, which becomes the `process_type` of every node they
//! produce.

pub mod builtins;
pub mod calcjob;
pub mod functions;
pub mod outline;
pub mod scheduler;
pub mod spec;
pub mod transport;
pub mod workchain;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::caching::CachingConfig;
use crate::engine::state::{self, ProcessState, ProcessStatus};
use crate::error::{Error, Result};
use crate::graph::{Link, LinkType};
use crate::kind::NodeKind;
use crate::node::Node;
use crate::store::Tx;

pub use calcjob::{CalcInfo, CalcJobDef, ParseResult, Resources};
pub use functions::WorkScope;
pub use spec::{Port, ProcessSpec};
pub use workchain::{ChildFailure, CtxValue, StepContext, WorkChainDef};

pub type Inputs = BTreeMap<String, Node>;
pub type Outputs = BTreeMap<String, Node>;

/// Version of this crate, recorded on every process node.
pub const CORE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    CalcFunction,
    WorkFunction,
    WorkChain,
    CalcJob,
}

impl Flavor {
    pub fn kind(self) -> NodeKind {
        NodeKind::builtin(match self {
            Flavor::CalcFunction => NodeKind::CALCFUNCTION,
            Flavor::WorkFunction => NodeKind::WORKFUNCTION,
            Flavor::WorkChain => NodeKind::WORKCHAIN,
            Flavor::CalcJob => NodeKind::CALCJOB,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::CalcFunction => "calcfunction",
            Flavor::WorkFunction => "workfunction",
            Flavor::WorkChain => "workchain",
            Flavor::CalcJob => "calcjob",
        }
    }

    pub fn is_calculation(self) -> bool {
        matches!(self, Flavor::CalcFunction | Flavor::CalcJob)
    }
}

pub type CalcFn = Arc<dyn Fn(&Inputs) -> Result<Outputs, String> + Send + Sync>;
pub type WorkFn = Arc<dyn Fn(&mut WorkScope<'_>, &Inputs) -> Result<Outputs, String> + Send + Sync>;

pub enum Body {
    CalcFunction(CalcFn),
    WorkFunction(WorkFn),
    WorkChain(WorkChainDef),
    CalcJob(CalcJobDef),
}

/// A registered process definition.
pub struct ProcessDef {
    pub id: String,
    pub label: String,
    /// Plugin version recorded next to the core version.
    pub version: String,
    pub spec: ProcessSpec,
    /// Source text captured into the repository of every node.
    pub source: String,
    pub body: Body,
}

impl std::fmt::Debug for ProcessDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessDef").field("id", &self.id).field("flavor", &self.flavor()).finish()
    }
}

impl ProcessDef {
    pub fn new(id: &str, label: &str, spec: ProcessSpec, source: &str, body: Body) -> Self {
        ProcessDef {
            id: id.to_string(),
            label: label.to_string(),
            version: "0.1.0".to_string(),
            spec,
            source: source.to_string(),
            body,
        }
    }

    pub fn calcfunction(
        id: &str,
        spec: ProcessSpec,
        source: &str,
        f: impl Fn(&Inputs) -> Result<Outputs, String> + Send + Sync + 'static,
    ) -> Self {
        Self::new(id, id, spec, source, Body::CalcFunction(Arc::new(f)))
    }

    pub fn workfunction(
        id: &str,
        spec: ProcessSpec,
        source: &str,
        f: impl Fn(&mut WorkScope<'_>, &Inputs) -> Result<Outputs, String> + Send + Sync + 'static,
    ) -> Self {
        Self::new(id, id, spec, source, Body::WorkFunction(Arc::new(f)))
    }

    pub fn with_version(mut self, version: &str) -> Self {
        self.version = version.to_string();
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn flavor(&self) -> Flavor {
        match self.body {
            Body::CalcFunction(_) => Flavor::CalcFunction,
            Body::WorkFunction(_) => Flavor::WorkFunction,
            Body::WorkChain(_) => Flavor::WorkChain,
            Body::CalcJob(_) => Flavor::CalcJob,
        }
    }

    /// Checks the spec and, for work chains, that the outline only names
    /// defined steps and predicates.
    pub fn check(&self) -> Result<()> {
        self.spec.check()?;
        match &self.body {
            Body::WorkChain(wc) => {
                let outline = self
                    .spec
                    .outline
                    .as_ref()
                    .ok_or_else(|| Error::Spec(format!("work chain `{}` has no outline", self.id)))?;
                for s in outline.step_names() {
                    if !wc.steps.contains_key(&s) {
                        return Err(Error::Spec(format!("outline names undefined step `{s}`")));
                    }
                }
                for p in outline.predicate_names() {
                    if !wc.predicates.contains_key(&p) {
                        return Err(Error::Spec(format!("outline names undefined predicate `{p}`")));
                    }
                }
            }
            _ if self.spec.outline.is_some() => {
                return Err(Error::Spec(format!("only work chains have an outline (`{}`)", self.id)));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn describe(&self) -> Value {
        json!({
            "id": self.id,
            "label": self.label,
            "flavor": self.flavor().as_str(),
            "kind": self.flavor().kind().as_str(),
            "version": self.version,
            "spec": self.spec.describe(),
        })
    }
}

/// Process definitions by id, plus aliases.
#[derive(Debug, Default)]
pub struct Registry {
    defs: BTreeMap<String, Arc<ProcessDef>>,
    aliases: BTreeMap<String, String>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the built-in processes.
    pub fn with_builtins() -> Self {
        let mut r = Registry::new();
        builtins::register_all(&mut r).expect("built-in definitions are valid");
        r
    }

    pub fn register(&mut self, def: ProcessDef) -> Result<()> {
        def.check()?;
        if self.defs.contains_key(&def.id) || self.aliases.contains_key(&def.id) {
            return Err(Error::Spec(format!("process `{}` is already registered", def.id)));
        }
        self.defs.insert(def.id.clone(), Arc::new(def));
        Ok(())
    }

    pub fn alias(&mut self, alias: &str, id: &str) -> Result<()> {
        if !self.defs.contains_key(id) {
            return Err(Error::NotFound(format!("process `{id}`")));
        }
        if self.defs.contains_key(alias) {
            return Err(Error::Spec(format!("alias `{alias}` shadows a registered process")));
        }
        self.aliases.insert(alias.to_string(), id.to_string());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<ProcessDef>> {
        let id = self.aliases.get(name).map(String::as_str).unwrap_or(name);
        self.defs.get(id).cloned().ok_or_else(|| Error::NotFound(format!("process `{name}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.defs.keys().map(String::as_str)
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(a, i)| (a.as_str(), i.as_str()))
    }
}

/// What a process needs from its surroundings while it runs.
#[derive(Clone)]
pub struct Env {
    pub registry: Arc<Registry>,
    pub caching: CachingConfig,
}

impl Env {
    pub fn new(registry: Arc<Registry>) -> Self {
        Env { registry, caching: CachingConfig::default() }
    }
}

/// Terminal (or current) result of a process.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub uuid: Uuid,
    pub state: ProcessState,
    pub exit_code: Option<i64>,
    pub exception: Option<String>,
    pub outputs: Outputs,
}

impl Outcome {
    pub fn load(tx: &Tx<'_>, uuid: Uuid) -> Result<Outcome> {
        let st = state::status(tx, uuid)?;
        Ok(Outcome::from_status(&st, outputs_of(tx, uuid)?))
    }

    pub(crate) fn from_status(st: &ProcessStatus, outputs: Outputs) -> Outcome {
        Outcome { uuid: st.uuid, state: st.state, exit_code: st.exit_code, exception: st.exception.clone(), outputs }
    }

    pub fn output(&self, name: &str) -> Option<&Node> {
        self.outputs.get(name)
    }

    /// Finished with exit code 0.
    pub fn is_ok(&self) -> bool {
        self.state == ProcessState::Finished && self.exit_code == Some(0)
    }
}

/// Outputs of a process: CREATE targets of calculations, RETURN targets of
/// workflows, by link label.
pub fn outputs_of(tx: &Tx<'_>, uuid: Uuid) -> Result<Outputs> {
    let mut out = Outputs::new();
    for rec in tx.links_from(uuid)? {
        if rec.link.link_type.is_output() {
            out.insert(rec.link.label.to_string(), tx.get_node(rec.link.target)?);
        }
    }
    Ok(out)
}

/// Inputs of a process by link label.
pub fn inputs_of(tx: &Tx<'_>, uuid: Uuid) -> Result<Inputs> {
    let mut out = Inputs::new();
    for rec in tx.links_into(uuid)? {
        if rec.link.link_type.is_input() {
            out.insert(rec.link.label.to_string(), tx.get_node(rec.link.source)?);
        }
    }
    Ok(out)
}

/// Process type recorded on a process node.
pub fn process_type_of(node: &Node) -> Option<&str> {
    node.attribute("process_type").and_then(Value::as_str)
}

/// Creates the process node for `def`: validates and stores the inputs,
/// links them, links the caller, finalizes the hash and inserts the
/// process record in state `created`.
pub(crate) fn create_process(
    tx: &Tx<'_>,
    def: &ProcessDef,
    inputs: &mut Inputs,
    caller: Option<Uuid>,
    call_label: &str,
) -> Result<Node> {
    def.spec.validate_inputs(inputs)?;
    for node in inputs.values_mut() {
        if !node.kind().is_data() {
            return Err(Error::Spec(format!("input {} is not a data node", node.uuid())));
        }
        if !node.is_stored() {
            tx.store_node(node)?;
        }
    }
    let flavor = def.flavor();
    let mut node = Node::new(flavor.kind()).with_label(&def.label);
    node.set_attribute("process_type", json!(def.id))?;
    node.set_attribute("process_label", json!(def.label))?;
    node.set_attribute("version", json!({"core": CORE_VERSION, "plugin": format!("{}@{}", def.id, def.version)}))?;
    match &def.body {
        Body::CalcJob(job) => calcjob::prepare_node(&mut node, job, inputs)?,
        _ => node.put_file("source.txt", def.source.as_bytes().to_vec())?,
    }
    tx.store_node(&mut node)?;
    let input_type = if flavor.is_calculation() { LinkType::InputCalc } else { LinkType::InputWork };
    for (name, input) in inputs.iter() {
        tx.insert_link(&Link::new(input.uuid(), node.uuid(), input_type, name)?)?;
    }
    if let Some(parent) = caller {
        let call_type = if flavor.is_calculation() { LinkType::CallCalc } else { LinkType::CallWork };
        tx.insert_link(&Link::new(parent, node.uuid(), call_type, call_label)?)?;
    }
    tx.refresh_hash(node.uuid())?;
    state::insert(tx, node.id().expect("stored"), node.uuid(), &def.id, caller)?;
    tx.get_node(node.uuid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Store;

    #[test]
    fn create_process_links_inputs_and_records_versions() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let registry = Registry::with_builtins();
        let def = registry.get("core.arithmetic.add").unwrap();
        let mut inputs = Inputs::from([("x".to_string(), Node::int(2)), ("y".to_string(), Node::int(3))]);
        let node = store.write(|tx| create_process(tx, &def, &mut inputs, None, "call")).unwrap();
        assert_eq!(node.kind().as_str(), NodeKind::CALCFUNCTION);
        assert_eq!(process_type_of(&node), Some("core.arithmetic.add"));
        assert_eq!(node.attribute("version.core"), Some(&json!(CORE_VERSION)));
        store
            .read(|tx| {
                let ins = inputs_of(tx, node.uuid())?;
                assert_eq!(ins["x"].as_i64(), Some(2));
                assert_eq!(state::status(tx, node.uuid())?.state, ProcessState::Created);
                assert!(!tx.read_file(node.uuid(), "source.txt")?.is_empty());
                Ok(())
            })
            .unwrap();

        let mut missing = Inputs::from([("x".to_string(), Node::int(2))]);
        let err = store.write(|tx| create_process(tx, &def, &mut missing, None, "call")).unwrap_err();
        assert!(matches!(err, Error::Spec(_)));
        assert_eq!(store.read(|tx| tx.count_nodes()).unwrap(), 3);
    }
}
