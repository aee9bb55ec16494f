//! Built-in process definitions.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::Result;
use crate::kind::NodeKind;
use crate::node::Node;

use super::calcjob::{CalcInfo, CalcJobDef, ParseResult, Resources, EXIT_MISSING_OUTPUT, EXIT_UNPARSABLE_OUTPUT};
use super::outline::{step, while_, Outline};
use super::workchain::ChildFailure;
use super::{Body, Inputs, Outputs, ProcessDef, ProcessSpec, Registry, WorkChainDef};

pub const ADD: &str = "core.arithmetic.add";
pub const ADD_JOB: &str = "core.arithmetic.add_job";
pub const FIBONACCI: &str = "core.workflows.fibonacci";
pub const SELECT_MAX: &str = "core.workflows.select_max";
pub const ADD_AND_RETURN: &str = "core.workflows.add_and_return";
pub const ADD_CHAIN: &str = "core.workflows.add_chain";
pub const REFERENCE: &str = "core.bench.reference";

/// Exit code of [`ADD_CHAIN`] when one of its jobs did not finish cleanly.
pub const EXIT_CHILD_FAILED: i64 = 400;

fn number(node: &Node) -> Option<Value> {
    node.value().filter(|v| v.is_number()).cloned()
}

/// `x + y` over integer or float nodes.
pub fn add_nodes(x: &Node, y: &Node) -> Result<Node, String> {
    match (x.as_i64(), y.as_i64()) {
        (Some(a), Some(b)) if x.kind().as_str() == NodeKind::INT && y.kind().as_str() == NodeKind::INT => {
            a.checked_add(b).map(Node::int).ok_or_else(|| "integer overflow".to_string())
        }
        _ => match (number(x).and_then(|v| v.as_f64()), number(y).and_then(|v| v.as_f64())) {
            (Some(a), Some(b)) => Ok(Node::float(a + b)),
            _ => Err("add needs two numeric inputs".into()),
        },
    }
}

fn pair_spec() -> ProcessSpec {
    ProcessSpec::new()
        .input("x", Some(NodeKind::DATA), true, "First operand.")
        .input("y", Some(NodeKind::DATA), true, "Second operand.")
}

fn add() -> ProcessDef {
    ProcessDef::calcfunction(
        ADD,
        pair_spec().output("result", None, true, "x + y"),
        "calcfunction add(x, y):\n    return x + y\n",
        |ins| Ok(Outputs::from([("result".to_string(), add_nodes(&ins["x"], &ins["y"])?)])),
    )
    .with_label("add")
}

fn add_job() -> ProcessDef {
    let job = CalcJobDef::new(
        "core.arithmetic.add",
        |ins: &Inputs| {
            let x = ins["x"].as_i64().ok_or("x must be an integer")?;
            let y = ins["y"].as_i64().ok_or("y must be an integer")?;
            Ok(CalcInfo {
                files: BTreeMap::from([("aiida.in".to_string(), format!("echo $(({x} + {y}))\n").into_bytes())]),
                executable: "bash".into(),
                stdin: Some("aiida.in".into()),
                stdout: Some("aiida.out".into()),
                resources: Resources::default(),
                retrieve: vec!["aiida.out".into()],
            })
        },
        |files: &BTreeMap<String, Vec<u8>>| {
            let Some(out) = files.get("aiida.out") else {
                return ParseResult::fail(EXIT_MISSING_OUTPUT, "output file aiida.out was not retrieved");
            };
            match String::from_utf8_lossy(out).trim().parse::<i64>() {
                Ok(v) => ParseResult {
                    outputs: Outputs::from([("sum".to_string(), Node::int(v))]),
                    exit_code: 0,
                    message: None,
                },
                Err(_) => ParseResult::fail(EXIT_UNPARSABLE_OUTPUT, "aiida.out does not hold an integer"),
            }
        },
    );
    let spec = pair_spec()
        .input("code", Some(NodeKind::CODE), false, "Code to run; its computer is used (default localhost).")
        .output("sum", Some(NodeKind::INT), false, "x + y as computed on the computer.");
    ProcessDef::new(ADD_JOB, "ArithmeticAdd", spec, "", Body::CalcJob(job))
}

fn fibonacci() -> ProcessDef {
    let spec = ProcessSpec::new()
        .input("n", Some(NodeKind::INT), true, "Compute the nth Fibonacci number.")
        .output("number", Some(NodeKind::INT), true, "The nth Fibonacci number.")
        .outline(Outline::new(vec![
            step("initialize"),
            while_("should_iterate", vec![step("iterate")]),
            step("results"),
        ]));
    let wc = WorkChainDef::new()
        .step("initialize", |c| {
            c.set("iteration", json!(0));
            c.set_node("previous", Node::int(0))?;
            c.set_node("current", Node::int(1))?;
            Ok(())
        })
        .predicate("should_iterate", |c| Ok(c.int("iteration")? < c.input_int("n")? - 1))
        .step("iterate", |c| {
            let previous = c.node("current")?;
            let out = c.run(ADD, Inputs::from([("x".to_string(), c.node("previous")?), ("y".to_string(), previous.clone())]))?;
            c.set_node("current", out["result"].clone())?;
            c.set_node("previous", previous)?;
            let i = c.int("iteration")?;
            c.set("iteration", json!(i + 1));
            Ok(())
        })
        .step("results", |c| {
            let current = c.node("current")?;
            c.out("number", &current)
        });
    let source = "initialize: iteration = 0; previous = Int(0); current = Int(1)\n\
                  while iteration < n - 1: current, previous = add(previous, current), current; iteration += 1\n\
                  results: out('number', current)\n";
    ProcessDef::new(FIBONACCI, "Fibonacci", spec, source, Body::WorkChain(wc))
}

fn select_max() -> ProcessDef {
    ProcessDef::workfunction(
        SELECT_MAX,
        ProcessSpec::new()
            .input("a", Some(NodeKind::DATA), true, "")
            .input("b", Some(NodeKind::DATA), true, "")
            .output("result", None, true, "The larger input."),
        "workfunction select_max(a, b):\n    return a if a >= b else b\n",
        |_, ins| {
            let (a, b) = (&ins["a"], &ins["b"]);
            let va = number(a).and_then(|v| v.as_f64()).ok_or("a is not numeric")?;
            let vb = number(b).and_then(|v| v.as_f64()).ok_or("b is not numeric")?;
            let pick = if va >= vb { a } else { b };
            Ok(Outputs::from([("result".to_string(), pick.clone())]))
        },
    )
}

fn add_and_return() -> ProcessDef {
    ProcessDef::workfunction(
        ADD_AND_RETURN,
        pair_spec().output("result", None, true, "x + y"),
        "workfunction add_and_return(x, y):\n    return add(x, y)\n",
        |scope, ins| {
            let out = scope.call(ADD, ins.clone())?;
            Ok(Outputs::from([("result".to_string(), out["result"].clone())]))
        },
    )
}

fn job_inputs(x: Node, y: Node) -> Inputs {
    Inputs::from([("x".to_string(), x), ("y".to_string(), y)])
}

/// Two dependent calculation jobs: `(x + y) + z`.
fn add_chain() -> ProcessDef {
    let spec = ProcessSpec::new()
        .input("x", Some(NodeKind::INT), true, "")
        .input("y", Some(NodeKind::INT), true, "")
        .input("z", Some(NodeKind::INT), true, "")
        .output("result", Some(NodeKind::INT), false, "(x + y) + z")
        .outline(Outline::new(vec![step("first"), step("second"), step("finalize")]));
    let wc = WorkChainDef::new()
        .step("first", |c| {
            c.submit("first", ADD_JOB, job_inputs(c.input("x")?.clone(), c.input("y")?.clone()))?;
            Ok(())
        })
        .step("second", |c| {
            let first = c.child("first")?;
            if !first.is_ok() {
                c.report(&format!("first job ended with exit code {:?}", first.exit_code))?;
                c.exit(EXIT_CHILD_FAILED);
                return Ok(());
            }
            let sum = first.output("sum").ok_or("first job has no sum")?.clone();
            c.submit("second", ADD_JOB, job_inputs(sum, c.input("z")?.clone()))?;
            Ok(())
        })
        .step("finalize", |c| {
            let second = c.child("second")?;
            match second.output("sum") {
                Some(sum) if second.is_ok() => c.out("result", &sum.clone()),
                _ => {
                    c.report(&format!("second job ended with exit code {:?}", second.exit_code))?;
                    c.exit(EXIT_CHILD_FAILED);
                    Ok(())
                }
            }
        })
        .on_child_failure(ChildFailure::Continue);
    ProcessDef::new(ADD_CHAIN, "AddChain", spec, "first = add_job(x, y); second = add_job(first.sum, z)\n", Body::WorkChain(wc))
}

/// One calculation-job addition followed by one calculation-function
/// addition; the workload of the engine benchmark.
fn reference() -> ProcessDef {
    let spec = ProcessSpec::new()
        .input("x", Some(NodeKind::INT), true, "")
        .input("y", Some(NodeKind::INT), true, "")
        .input("z", Some(NodeKind::INT), true, "")
        .output("result", Some(NodeKind::INT), true, "(x + y) + z")
        .outline(Outline::new(vec![step("submit_job"), step("add")]));
    let wc = WorkChainDef::new()
        .step("submit_job", |c| {
            c.submit("job", ADD_JOB, job_inputs(c.input("x")?.clone(), c.input("y")?.clone()))?;
            Ok(())
        })
        .step("add", |c| {
            let job = c.child("job")?;
            let sum = job.output("sum").filter(|_| job.is_ok()).ok_or("calculation job failed")?.clone();
            let out = c.run(ADD, Inputs::from([("x".to_string(), sum), ("y".to_string(), c.input("z")?.clone())]))?;
            c.out("result", &out["result"])
        });
    ProcessDef::new(REFERENCE, "ReferenceWorkChain", spec, "job = add_job(x, y); result = add(job.sum, z)\n", Body::WorkChain(wc))
}

pub fn register_all(r: &mut Registry) -> Result<()> {
    r.register(add())?;
    r.register(add_job())?;
    r.register(fibonacci())?;
    r.register(select_max())?;
    r.register(add_and_return())?;
    r.register(add_chain())?;
    r.register(reference())?;
    for (alias, id) in [
        ("add", ADD),
        ("add_job", ADD_JOB),
        ("ArithmeticAdd", ADD_JOB),
        ("fibonacci", FIBONACCI),
        ("Fibonacci", FIBONACCI),
        ("select_max", SELECT_MAX),
        ("add_chain", ADD_CHAIN),
        ("reference", REFERENCE),
    ] {
        r.alias(alias, id)?;
    }
    Ok(())
}
