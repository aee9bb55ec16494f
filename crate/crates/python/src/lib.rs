//! Python bindings. Values cross the boundary as JSON so that Python
//! receives plain dicts, lists and scalars.

use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use provflow::process::Outcome;
use provflow::query::{self, QueryPlan};
use provflow::{Engine as CoreEngine, Inputs, Node, ProcessState, Registry, TcMode};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};
use uuid::Uuid;

fn err(e: provflow::Error) -> PyErr {
    match e {
        provflow::Error::NotFound(m) => PyKeyError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn parse_uuid(s: &str) -> PyResult<Uuid> {
    Uuid::parse_str(s).map_err(|e| PyValueError::new_err(format!("bad uuid `{s}`: {e}")))
}

/// The data node for a plain value; a string `@UUID` names a stored node.
pub fn value_node(engine: &CoreEngine, v: Value) -> provflow::Result<Node> {
    Ok(match v {
        Value::String(s) if s.starts_with('@') => {
            let u = Uuid::parse_str(&s[1..]).map_err(|e| provflow::Error::NotFound(e.to_string()))?;
            engine.store().get_node(u)?
        }
        Value::Bool(b) => Node::bool(b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => Node::int(i),
            None => Node::float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => Node::str(s),
        Value::Array(items) => Node::list(items),
        Value::Object(_) => Node::dict(v)?,
        Value::Null => return Err(provflow::Error::Config("None is not a node value".into())),
    })
}

/// A node as JSON: summary, attributes and extras.
pub fn node_json(n: &Node) -> Value {
    let mut v = n.summary();
    v["attributes"] = Value::Object(n.attributes().clone());
    v["extras"] = Value::Object(n.extras().clone());
    v
}

/// Output values keyed by port; data without a `value` attribute is given
/// as its full node document.
pub fn outcome_json(o: &Outcome) -> Value {
    let outputs: serde_json::Map<String, Value> =
        o.outputs.iter().map(|(k, n)| (k.clone(), n.value().cloned().unwrap_or_else(|| node_json(n)))).collect();
    json!({
        "uuid": o.uuid.to_string(),
        "state": o.state.to_string(),
        "exit_code": o.exit_code,
        "exception": o.exception,
        "outputs": outputs,
    })
}

/// An engine over one store directory, with the built-in processes.
#[pyclass(name = "Engine")]
pub struct PyEngine {
    inner: Mutex<CoreEngine>,
}

impl PyEngine {
    fn engine(&self) -> MutexGuard<'_, CoreEngine> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn inputs(&self, inputs: &Bound<'_, PyAny>) -> PyResult<Inputs> {
        let e = self.engine();
        match to_json(inputs)? {
            Value::Object(map) => map.into_iter().map(|(k, v)| Ok((k, value_node(&e, v).map_err(err)?))).collect(),
            _ => Err(PyValueError::new_err("inputs must be a dict")),
        }
    }

    fn status_py<'py>(&self, py: Python<'py>, status: provflow::engine::ProcessStatus) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &serde_json::to_value(status).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
    }
}

#[pymethods]
impl PyEngine {
    #[new]
    fn new(path: &str) -> PyResult<Self> {
        let engine = CoreEngine::open(path, Arc::new(Registry::with_builtins())).map_err(err)?;
        Ok(PyEngine { inner: Mutex::new(engine) })
    }

    /// Runs a process to completion in this thread.
    fn run<'py>(&self, py: Python<'py>, process: &str, inputs: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let inputs = self.inputs(inputs)?;
        let out = self.engine().run(process, inputs).map_err(err)?;
        to_py(py, &outcome_json(&out))
    }

    /// Queues a process for the daemon; returns its uuid.
    fn submit(&self, process: &str, inputs: &Bound<'_, PyAny>) -> PyResult<String> {
        let inputs = self.inputs(inputs)?;
        Ok(self.engine().submit(process, inputs).map_err(err)?.to_string())
    }

    fn status<'py>(&self, py: Python<'py>, uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let st = self.engine().status(parse_uuid(uuid)?).map_err(err)?;
        self.status_py(py, st)
    }

    fn outcome<'py>(&self, py: Python<'py>, uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let out = self.engine().outcome(parse_uuid(uuid)?).map_err(err)?;
        to_py(py, &outcome_json(&out))
    }

    #[pyo3(signature = (state=None))]
    fn list<'py>(&self, py: Python<'py>, state: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let state = state.map(ProcessState::from_str).transpose().map_err(|e| PyValueError::new_err(e.to_string()))?;
        let rows = self.engine().list(state).map_err(err)?;
        to_py(py, &serde_json::to_value(rows).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
    }

    fn pause<'py>(&self, py: Python<'py>, uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let st = self.engine().pause(parse_uuid(uuid)?).map_err(err)?;
        self.status_py(py, st)
    }

    fn play<'py>(&self, py: Python<'py>, uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let st = self.engine().play(parse_uuid(uuid)?).map_err(err)?;
        self.status_py(py, st)
    }

    fn kill<'py>(&self, py: Python<'py>, uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let st = self.engine().kill(parse_uuid(uuid)?).map_err(err)?;
        self.status_py(py, st)
    }

    fn node<'py>(&self, py: Python<'py>, uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let n = self.engine().store().get_node(parse_uuid(uuid)?).map_err(err)?;
        to_py(py, &node_json(&n))
    }

    /// Ancestor uuids mapped to their distance.
    #[pyo3(signature = (uuid, strategy="otf", max_depth=None))]
    fn ancestors<'py>(&self, py: Python<'py>, uuid: &str, strategy: &str, max_depth: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
        self.closure(py, uuid, strategy, max_depth, true)
    }

    /// Descendant uuids mapped to their distance.
    #[pyo3(signature = (uuid, strategy="otf", max_depth=None))]
    fn descendants<'py>(&self, py: Python<'py>, uuid: &str, strategy: &str, max_depth: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
        self.closure(py, uuid, strategy, max_depth, false)
    }

    /// Runs a query plan given as JSON text; returns the projected rows.
    fn query<'py>(&self, py: Python<'py>, plan: &str) -> PyResult<Bound<'py, PyAny>> {
        let e = self.engine();
        let plan = QueryPlan::from_json(plan).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let rows = e.store().read(|tx| query::all(tx, &plan)).map_err(err)?;
        to_py(py, &Value::from(rows.into_iter().map(Value::from).collect::<Vec<_>>()))
    }
}

impl PyEngine {
    fn closure<'py>(&self, py: Python<'py>, uuid: &str, strategy: &str, max_depth: Option<u32>, up: bool) -> PyResult<Bound<'py, PyAny>> {
        let mode = TcMode::from_str(strategy).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let u = parse_uuid(uuid)?;
        let found = self
            .engine()
            .store()
            .read(|tx| if up { query::ancestors_of(tx, u, mode, max_depth) } else { query::descendants_of(tx, u, mode, max_depth) })
            .map_err(err)?;
        let map: serde_json::Map<String, Value> = found.into_iter().map(|(k, d)| (k.to_string(), json!(d))).collect();
        to_py(py, &Value::Object(map))
    }
}

#[pymodule(name = "provflow")]
mod module {
    #[pymodule_export]
    use super::PyEngine;
}
