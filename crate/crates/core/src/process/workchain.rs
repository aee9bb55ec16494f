//! Work chains: interruptible workflows driven by an outline program.
//!
//! Each activation runs exactly one step against the persisted context.
//! A step may run process functions inline (they finish inside the step),
//! submit child processes (which ends the step: the chain waits until all
//! awaited children are terminal), return existing nodes as outputs, or set
//! an exit code. The engine persists the context and program counter after
//! every step in the same transaction as the step's effects.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::engine::queue;
use crate::engine::state::{self, ProcessState};
use crate::error::Result;
use crate::node::Node;
use crate::store::Tx;

use super::functions::{call_function, return_link};
use super::outline::{self, Next, Outline, Pc};
use super::{create_process, outputs_of, Env, Inputs, Outcome, Outputs, ProcessDef};

/// A context binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum CtxValue {
    Node(Uuid),
    Scalar(Value),
    Awaited(Vec<Uuid>),
}

pub type Context = BTreeMap<String, CtxValue>;

/// What happens to a chain when an awaited child excepts or is killed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildFailure {
    /// The chain excepts.
    #[default]
    Except,
    /// The chain continues; steps inspect the child themselves.
    Continue,
}

pub type StepFn = Arc<dyn Fn(&mut StepContext<'_>) -> Result<(), String> + Send + Sync>;
pub type PredicateFn = Arc<dyn Fn(&StepContext<'_>) -> Result<bool, String> + Send + Sync>;

#[derive(Clone, Default)]
pub struct WorkChainDef {
    pub steps: BTreeMap<String, StepFn>,
    pub predicates: BTreeMap<String, PredicateFn>,
    pub on_child_failure: ChildFailure,
}

impl WorkChainDef {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(mut self, name: &str, f: impl Fn(&mut StepContext<'_>) -> Result<(), String> + Send + Sync + 'static) -> Self {
        self.steps.insert(name.to_string(), Arc::new(f));
        self
    }

    pub fn predicate(mut self, name: &str, f: impl Fn(&StepContext<'_>) -> Result<bool, String> + Send + Sync + 'static) -> Self {
        self.predicates.insert(name.to_string(), Arc::new(f));
        self
    }

    pub fn on_child_failure(mut self, policy: ChildFailure) -> Self {
        self.on_child_failure = policy;
        self
    }
}

/// Persistent state of a work chain between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkChainState {
    pub ctx: Context,
    /// Counter of the next instruction to evaluate.
    pub pc: Pc,
    pub awaiting: Vec<Uuid>,
    pub exit_code: Option<i64>,
    pub steps_done: u64,
}

impl Default for WorkChainState {
    fn default() -> Self {
        WorkChainState { ctx: Context::new(), pc: outline::start(), awaiting: Vec::new(), exit_code: None, steps_done: 0 }
    }
}

/// The view a step or predicate has of its chain.
pub struct StepContext<'a> {
    tx: &'a Tx<'a>,
    env: &'a Env,
    uuid: Uuid,
    channel: &'a str,
    inputs: &'a Inputs,
    state: &'a mut WorkChainState,
    def: &'a ProcessDef,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl<'a> StepContext<'a> {
    pub fn uuid(&self) -> Uuid {
        self.uuid
    }

    pub fn input(&self, name: &str) -> Result<&Node, String> {
        self.inputs.get(name).ok_or_else(|| format!("no input `{name}`"))
    }

    pub fn input_int(&self, name: &str) -> Result<i64, String> {
        self.input(name)?.as_i64().ok_or_else(|| format!("input `{name}` is not an integer"))
    }

    pub fn get(&self, key: &str) -> Option<&CtxValue> {
        self.state.ctx.get(key)
    }

    /// The node bound to `key`.
    pub fn node(&self, key: &str) -> Result<Node, String> {
        match self.state.ctx.get(key) {
            Some(CtxValue::Node(u)) => self.tx.get_node(*u).map_err(err),
            _ => Err(format!("context `{key}` is not a node")),
        }
    }

    /// Integer value of the node or scalar bound to `key`.
    pub fn int(&self, key: &str) -> Result<i64, String> {
        match self.state.ctx.get(key) {
            Some(CtxValue::Scalar(v)) => v.as_i64().ok_or_else(|| format!("context `{key}` is not an integer")),
            Some(CtxValue::Node(_)) => self.node(key)?.as_i64().ok_or_else(|| format!("context `{key}` is not an integer")),
            _ => Err(format!("context `{key}` is unset")),
        }
    }

    /// Binds a node, storing it first if needed (checkpoints reference
    /// stored nodes only).
    pub fn set_node(&mut self, key: &str, mut node: Node) -> Result<Uuid, String> {
        if !node.is_stored() {
            if !node.kind().is_data() {
                return Err("only data nodes can be bound in the context".into());
            }
            self.tx.store_node(&mut node).map_err(err)?;
        }
        self.state.ctx.insert(key.to_string(), CtxValue::Node(node.uuid()));
        Ok(node.uuid())
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.state.ctx.insert(key.to_string(), CtxValue::Scalar(value));
    }

    /// Runs a process function inline as a child of this chain.
    pub fn run(&mut self, id: &str, inputs: Inputs) -> Result<Outputs, String> {
        let def = self.env.registry.get(id).map_err(err)?;
        let (outcome, violation) = call_function(self.tx, self.env, &def, inputs, Some(self.uuid), "call").map_err(err)?;
        if let Some(v) = violation {
            return Err(v.to_string());
        }
        if !outcome.is_ok() {
            return Err(format!(
                "child {} ended {} ({})",
                outcome.uuid,
                outcome.state,
                outcome.exception.as_deref().unwrap_or("nonzero exit code")
            ));
        }
        Ok(outcome.outputs)
    }

    /// Submits a child process and awaits it under `key`. The step that
    /// submits ends the chain's activation: the next step runs once every
    /// awaited child is terminal.
    pub fn submit(&mut self, key: &str, id: &str, mut inputs: Inputs) -> Result<Uuid, String> {
        let def = self.env.registry.get(id).map_err(err)?;
        let node = create_process(self.tx, &def, &mut inputs, Some(self.uuid), key).map_err(err)?;
        queue::enqueue(self.tx, node.uuid(), self.channel).map_err(err)?;
        match self.state.ctx.entry(key.to_string()).or_insert_with(|| CtxValue::Awaited(Vec::new())) {
            CtxValue::Awaited(list) => list.push(node.uuid()),
            other => *other = CtxValue::Awaited(vec![node.uuid()]),
        }
        self.state.awaiting.push(node.uuid());
        Ok(node.uuid())
    }

    /// Children awaited under `key`, in submission order.
    pub fn children(&self, key: &str) -> Vec<Uuid> {
        match self.state.ctx.get(key) {
            Some(CtxValue::Awaited(list)) => list.clone(),
            _ => Vec::new(),
        }
    }

    /// Outcome of the most recent child awaited under `key`.
    pub fn child(&self, key: &str) -> Result<Outcome, String> {
        let last = *self.children(key).last().ok_or_else(|| format!("no child under `{key}`"))?;
        Outcome::load(self.tx, last).map_err(err)
    }

    /// Returns an existing node as output `label`.
    pub fn out(&mut self, label: &str, node: &Node) -> Result<(), String> {
        return_link(self.tx, self.def, self.uuid, label, node).map_err(err)
    }

    pub fn report(&mut self, message: &str) -> Result<(), String> {
        state::report(self.tx, self.uuid, "report", message).map_err(err)
    }

    /// Stops the outline after this step; the chain finishes with `code`.
    pub fn exit(&mut self, code: i64) {
        self.state.exit_code = Some(code);
    }
}

/// Result of one activation of a work chain.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// A step ran; `name` is its outline name.
    Stepped { name: String, pc: Pc, awaiting: bool },
    /// The outline is exhausted or the chain called `exit`.
    Finished(i64),
    Excepted(String),
}

/// Evaluates predicates from the saved counter and runs the next step.
pub(crate) fn run_step(
    tx: &Tx<'_>,
    env: &Env,
    def: &ProcessDef,
    wc: &WorkChainDef,
    uuid: Uuid,
    channel: &str,
    inputs: &Inputs,
    st: &mut WorkChainState,
) -> Result<StepOutcome> {
    if let Some(code) = st.exit_code {
        return Ok(StepOutcome::Finished(code));
    }
    let outline: &Outline = def.spec.outline.as_ref().expect("checked at registration");
    let snapshot = st.clone();
    let mut predicate = |name: &str| -> Result<bool, String> {
        let mut view = snapshot.clone();
        let ctx = StepContext { tx, env, uuid, channel, inputs, state: &mut view, def };
        (wc.predicates[name])(&ctx)
    };
    let next = match outline.advance(st.pc.clone(), &mut predicate) {
        Ok(n) => n,
        Err(msg) => return Ok(StepOutcome::Excepted(msg)),
    };
    match next {
        Next::Done => {
            let returned = outputs_of(tx, uuid)?;
            for (name, port) in &def.spec.outputs {
                if port.required && !returned.contains_key(name) {
                    return Ok(StepOutcome::Excepted(format!("required output `{name}` was not returned")));
                }
            }
            Ok(StepOutcome::Finished(0))
        }
        Next::Step(name, pc) => {
            // A failing step leaves no partial effects behind.
            tx.conn().execute_batch("SAVEPOINT step")?;
            let before = st.clone();
            let mut ctx = StepContext { tx, env, uuid, channel, inputs, state: st, def };
            if let Err(msg) = (wc.steps[&name])(&mut ctx) {
                tx.conn().execute_batch("ROLLBACK TO step; RELEASE step")?;
                *st = before;
                return Ok(StepOutcome::Excepted(format!("step `{name}` failed: {msg}")));
            }
            tx.conn().execute_batch("RELEASE step")?;
            st.pc = Outline::after(&pc);
            st.steps_done += 1;
            Ok(StepOutcome::Stepped { name, pc, awaiting: !st.awaiting.is_empty() })
        }
    }
}

/// Where the awaited children of a chain stand.
#[derive(Debug, Clone, PartialEq)]
pub enum Children {
    Pending,
    Done,
    Failed(String),
}

pub(crate) fn check_children(tx: &Tx<'_>, st: &WorkChainState, policy: ChildFailure) -> Result<Children> {
    let mut failure = None;
    for child in &st.awaiting {
        let status = state::status(tx, *child)?;
        if !status.state.is_terminal() {
            return Ok(Children::Pending);
        }
        if matches!(status.state, ProcessState::Excepted | ProcessState::Killed) && failure.is_none() {
            failure = Some(format!("child {child} ended {}", status.state));
        }
    }
    Ok(match (failure, policy) {
        (Some(msg), ChildFailure::Except) => Children::Failed(msg),
        _ => Children::Done,
    })
}
