use std::sync::Arc;

use provflow::process::builtins::FIBONACCI;
use provflow::{Engine, Inputs, NodeKind, Registry};
use provflow_py::{node_json, outcome_json, value_node};
use serde_json::json;

fn engine() -> (tempfile::TempDir, Engine) {
    let dir = tempfile::tempdir().unwrap();
    let e = Engine::open(dir.path(), Arc::new(Registry::with_builtins())).unwrap();
    (dir, e)
}

#[test]
fn plain_values_become_data_nodes() {
    let (_dir, e) = engine();
    let cases = [
        (json!(3), NodeKind::INT),
        (json!(2.5), NodeKind::FLOAT),
        (json!(true), NodeKind::BOOL),
        (json!("s"), NodeKind::STR),
        (json!([1, 2]), NodeKind::LIST),
        (json!({"a": 1}), NodeKind::DICT),
    ];
    for (v, kind) in cases {
        assert_eq!(value_node(&e, v.clone()).unwrap().kind().as_str(), kind, "{v}");
    }
    assert!(value_node(&e, json!(null)).is_err());
}

#[test]
fn stored_nodes_are_referenced_by_uuid() {
    let (_dir, e) = engine();
    let out = e.run(FIBONACCI, Inputs::from([("n".into(), value_node(&e, json!(6)).unwrap())])).unwrap();
    let number = out.output("number").unwrap().uuid();
    let again = value_node(&e, json!(format!("@{number}"))).unwrap();
    assert_eq!(again.uuid(), number);
    let doc = outcome_json(&out);
    assert_eq!(doc["outputs"]["number"], 8);
    assert_eq!(doc["exit_code"], 0);
    assert_eq!(node_json(&again)["attributes"]["value"], 8);
}
