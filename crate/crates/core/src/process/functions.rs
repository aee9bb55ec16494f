//! Calculation functions and work functions.
//!
//! A process function runs to completion inside one transaction: node
//! creation, input links, execution, output links and the terminal state
//! commit together. A calculation function must return new (unstored) data,
//! which is stored and CREATE-linked; a work function must return data that
//! already exists, which is RETURN-linked. Work functions may call further
//! process functions through their [`WorkScope`], which adds CALL links.

use uuid::Uuid;

use crate::caching;
use crate::engine::state::{self, Change, ProcessState};
use crate::error::{Error, Result};
use crate::graph::{Link, LinkType};
use crate::node::Node;
use crate::store::{Store, Tx};

use super::{create_process, outputs_of, Body, Env, Inputs, Outcome, Outputs, ProcessDef};

/// Handle through which a work function calls other process functions.
pub struct WorkScope<'a> {
    tx: &'a Tx<'a>,
    env: &'a Env,
    caller: Uuid,
}

impl<'a> WorkScope<'a> {
    pub fn caller(&self) -> Uuid {
        self.caller
    }

    /// Runs the process function `id` as a child of this work function and
    /// returns its outputs. A child that does not finish with exit code 0
    /// is an error of the caller.
    pub fn call(&mut self, id: &str, inputs: Inputs) -> Result<Outputs, String> {
        let def = self.env.registry.get(id).map_err(|e| e.to_string())?;
        let (outcome, violation) =
            call_function(self.tx, self.env, &def, inputs, Some(self.caller), "call").map_err(|e| e.to_string())?;
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

    /// Loads a stored node.
    pub fn node(&self, uuid: Uuid) -> Result<Node, String> {
        self.tx.get_node(uuid).map_err(|e| e.to_string())
    }
}

/// Creates and executes a process function. Returns the outcome and, when
/// the function broke the create/return rules, the violation (the process
/// itself is then recorded as excepted).
pub(crate) fn call_function(
    tx: &Tx<'_>,
    env: &Env,
    def: &ProcessDef,
    mut inputs: Inputs,
    caller: Option<Uuid>,
    call_label: &str,
) -> Result<(Outcome, Option<Error>)> {
    if !matches!(def.body, Body::CalcFunction(_) | Body::WorkFunction(_)) {
        return Err(Error::Spec(format!("`{}` is not a process function", def.id)));
    }
    let node = create_process(tx, def, &mut inputs, caller, call_label)?;
    execute_function(tx, env, node.uuid(), def, &inputs)
}

/// Executes a process function whose node exists in state `created`.
pub(crate) fn execute_function(
    tx: &Tx<'_>,
    env: &Env,
    uuid: Uuid,
    def: &ProcessDef,
    inputs: &Inputs,
) -> Result<(Outcome, Option<Error>)> {
    state::transition(tx, uuid, ProcessState::Running, Change::default())?;
    if def.flavor().is_calculation() && env.caching.is_enabled(&def.id) {
        if let Some(source) = caching::find_cache_source(tx, uuid)? {
            if caching::clone_outputs_from(tx, source, uuid)? {
                state::report(tx, uuid, "cache", &format!("outputs cloned from {source}"))?;
                let st = state::transition(tx, uuid, ProcessState::Finished, Change { exit_code: Some(0), ..Default::default() })?;
                return Ok((Outcome::from_status(&st, outputs_of(tx, uuid)?), None));
            }
        }
    }
    let result = match &def.body {
        Body::CalcFunction(f) => {
            f(inputs).map_err(Failure::Raised).and_then(|outs| atomically(tx, || record_created(tx, def, uuid, outs)))
        }
        Body::WorkFunction(f) => {
            let mut scope = WorkScope { tx, env, caller: uuid };
            f(&mut scope, inputs)
                .map_err(Failure::Raised)
                .and_then(|outs| atomically(tx, || record_returned(tx, def, uuid, outs)))
        }
        _ => unreachable!("checked by the caller"),
    };
    let (change, to, violation) = match result {
        Ok(()) => (Change { exit_code: Some(0), ..Default::default() }, ProcessState::Finished, None),
        Err(Failure::Raised(msg)) => (Change { exception: Some(msg), ..Default::default() }, ProcessState::Excepted, None),
        Err(Failure::Violation(err)) => {
            (Change { exception: Some(err.to_string()), ..Default::default() }, ProcessState::Excepted, Some(err))
        }
        Err(Failure::Store(err)) => return Err(err),
    };
    let st = state::transition(tx, uuid, to, change)?;
    let outputs = if to == ProcessState::Finished { outputs_of(tx, uuid)? } else { Outputs::new() };
    Ok((Outcome::from_status(&st, outputs), violation))
}

enum Failure {
    Raised(String),
    Violation(Error),
    Store(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::CreateViolation(_) | Error::ReturnViolation(_) | Error::Spec(_) | Error::Link(_) => Failure::Violation(e),
            other => Failure::Store(other),
        }
    }
}

/// Runs `f` inside a savepoint so a failure leaves no partial outputs.
fn atomically(tx: &Tx<'_>, f: impl FnOnce() -> Result<(), Failure>) -> Result<(), Failure> {
    tx.conn().execute_batch("SAVEPOINT outputs").map_err(|e| Failure::Store(e.into()))?;
    let result = f();
    let end = if result.is_ok() { "RELEASE outputs" } else { "ROLLBACK TO outputs; RELEASE outputs" };
    tx.conn().execute_batch(end).map_err(|e| Failure::Store(e.into()))?;
    result
}

fn record_created(tx: &Tx<'_>, def: &ProcessDef, uuid: Uuid, outputs: Outputs) -> Result<(), Failure> {
    for (name, node) in &outputs {
        if node.is_stored() {
            return Err(Failure::Violation(Error::CreateViolation(format!(
                "output `{name}` is the existing node {}; calculations must create new data",
                node.uuid()
            ))));
        }
        if !node.kind().is_data() {
            return Err(Failure::Violation(Error::CreateViolation(format!("output `{name}` is not a data node"))));
        }
        def.spec.validate_output(name, node.kind())?;
    }
    for (name, mut node) in outputs {
        tx.store_node(&mut node)?;
        tx.insert_link(&Link::new(uuid, node.uuid(), LinkType::Create, &name).map_err(|e| Error::Spec(e.to_string()))?)?;
    }
    Ok(())
}

fn record_returned(tx: &Tx<'_>, def: &ProcessDef, uuid: Uuid, outputs: Outputs) -> Result<(), Failure> {
    for (name, node) in &outputs {
        return_link(tx, def, uuid, name, node)?;
    }
    Ok(())
}

/// RETURN-links an existing node from workflow `uuid`.
pub(crate) fn return_link(tx: &Tx<'_>, def: &ProcessDef, uuid: Uuid, name: &str, node: &Node) -> Result<()> {
    if !node.is_stored() || tx.node_id(node.uuid())?.is_none() {
        return Err(Error::ReturnViolation(format!(
            "output `{name}` is new data; workflows may only return existing nodes"
        )));
    }
    def.spec.validate_output(name, node.kind())?;
    let link = Link::new(uuid, node.uuid(), LinkType::Return, name).map_err(|e| Error::Spec(e.to_string()))?;
    tx.insert_link(&link)?;
    Ok(())
}

/// Runs a process function to completion outside the engine.
///
/// Process-level failures (the function returned an error) yield an
/// excepted [`Outcome`]. Breaking the create/return rules is reported as
/// [`Error::CreateViolation`] or [`Error::ReturnViolation`]; the excepted
/// process node is committed either way.
pub fn run_function(store: &Store, env: &Env, id: &str, inputs: Inputs) -> Result<Outcome> {
    let def = env.registry.get(id)?;
    let (outcome, violation) = store.write(|tx| call_function(tx, env, &def, inputs, None, "call"))?;
    match violation {
        Some(v) => Err(v),
        None => Ok(outcome),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::graph::check_data_provenance_acyclic;
    use crate::process::{ProcessSpec, Registry};

    fn env() -> (tempfile::TempDir, Store, Env) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut r = Registry::with_builtins();
        r.register(ProcessDef::calcfunction(
            "test.echo",
            ProcessSpec::new().input("x", None, true, ""),
            "echo",
            |ins| Ok(Outputs::from([("result".to_string(), ins["x"].clone())])),
        ))
        .unwrap();
        r.register(ProcessDef::calcfunction("test.fail", ProcessSpec::new().input("x", None, true, ""), "fail", |_| {
            Err("boom".into())
        }))
        .unwrap();
        r.register(ProcessDef::workfunction(
            "test.fresh",
            ProcessSpec::new().input("x", None, true, ""),
            "fresh",
            |_, _| Ok(Outputs::from([("result".to_string(), Node::int(1))])),
        ))
        .unwrap();
        r.register(ProcessDef::workfunction(
            "test.nested",
            ProcessSpec::new().input("x", None, true, ""),
            "nested",
            |scope, ins| {
                let out = scope.call("core.workflows.select_max", Inputs::from([
                    ("a".to_string(), ins["x"].clone()),
                    ("b".to_string(), Node::int(0)),
                ]))?;
                Ok(Outputs::from([("result".to_string(), out["result"].clone())]))
            },
        ))
        .unwrap();
        (dir, store, Env::new(Arc::new(r)))
    }

    fn int_inputs(pairs: &[(&str, i64)]) -> Inputs {
        pairs.iter().map(|(k, v)| (k.to_string(), Node::int(*v))).collect()
    }

    #[test]
    fn calcfunction_creates_result() {
        let (_d, store, env) = env();
        let out = run_function(&store, &env, "core.arithmetic.add", int_inputs(&[("x", 2), ("y", 3)])).unwrap();
        assert!(out.is_ok());
        assert_eq!(out.output("result").unwrap().as_i64(), Some(5));
        let links = store.read(|tx| tx.links_from(out.uuid)).unwrap();
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].link.link_type, LinkType::Create);
        assert_eq!(links[0].link.label.as_str(), "result");
    }

    #[test]
    fn returning_an_input_from_a_calculation_is_a_create_violation() {
        let (_d, store, env) = env();
        let err = run_function(&store, &env, "test.echo", int_inputs(&[("x", 1)])).unwrap_err();
        assert!(matches!(err, Error::CreateViolation(_)));
        let procs = store.read(|tx| state::list(tx, Some(ProcessState::Excepted))).unwrap();
        assert_eq!(procs.len(), 1);
        assert!(store.read(|tx| tx.links_from(procs[0].uuid)).unwrap().is_empty());
    }

    #[test]
    fn raising_function_is_excepted_without_outputs() {
        let (_d, store, env) = env();
        let out = run_function(&store, &env, "test.fail", int_inputs(&[("x", 1)])).unwrap();
        assert_eq!(out.state, ProcessState::Excepted);
        assert_eq!(out.exception.as_deref(), Some("boom"));
        assert!(out.outputs.is_empty());
    }

    #[test]
    fn workfunction_returning_new_data_is_a_return_violation() {
        let (_d, store, env) = env();
        let err = run_function(&store, &env, "test.fresh", int_inputs(&[("x", 1)])).unwrap_err();
        assert!(matches!(err, Error::ReturnViolation(_)));
    }

    #[test]
    fn select_max_returns_its_input_forming_a_legal_cycle() {
        let (_d, store, env) = env();
        let a = Node::int(7);
        let a_uuid = a.uuid();
        let out = run_function(
            &store,
            &env,
            "core.workflows.select_max",
            Inputs::from([("a".to_string(), a), ("b".to_string(), Node::int(3))]),
        )
        .unwrap();
        assert!(out.is_ok());
        assert_eq!(out.output("result").unwrap().uuid(), a_uuid);
        store
            .read(|tx| {
                let into = tx.links_into(out.uuid)?;
                assert!(into.iter().any(|l| l.link.source == a_uuid && l.link.link_type == LinkType::InputWork));
                let from = tx.links_from(out.uuid)?;
                assert!(from.iter().any(|l| l.link.target == a_uuid && l.link.link_type == LinkType::Return));
                assert!(check_data_provenance_acyclic(tx).unwrap().is_ok());
                Ok(())
            })
            .unwrap();
    }

    #[test]
    fn workfunction_calls_are_linked() {
        let (_d, store, env) = env();
        let out = run_function(&store, &env, "core.workflows.add_and_return", int_inputs(&[("x", 2), ("y", 3)])).unwrap();
        assert!(out.is_ok());
        assert_eq!(out.output("result").unwrap().as_i64(), Some(5));
        let from = store.read(|tx| tx.links_from(out.uuid)).unwrap();
        let types: Vec<LinkType> = from.iter().map(|l| l.link.link_type).collect();
        assert!(types.contains(&LinkType::CallCalc) && types.contains(&LinkType::Return));

        let nested = run_function(&store, &env, "test.nested", int_inputs(&[("x", 4)])).unwrap();
        assert!(nested.is_ok());
        store
            .read(|tx| {
                let calls: Vec<_> =
                    tx.links_from(nested.uuid)?.into_iter().filter(|l| l.link.link_type == LinkType::CallWork).collect();
                assert_eq!(calls.len(), 1);
                let child = calls[0].link.target;
                let callers = tx.links_into(child)?.into_iter().filter(|l| l.link.link_type.is_call()).count();
                assert_eq!(callers, 1);
                Ok(())
            })
            .unwrap();
    }
}
