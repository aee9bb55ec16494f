use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::outline::Outline;
use super::Inputs;
use crate::error::{Error, Result};
use crate::graph::LinkLabel;
use crate::kind::NodeKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    /// Accepted kind subtree, `None` for any data node.
    pub valid_type: Option<String>,
    pub required: bool,
    pub help: String,
}

/// Declared inputs, outputs and (for work chains) the outline program.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub inputs: BTreeMap<String, Port>,
    pub outputs: BTreeMap<String, Port>,
    pub outline: Option<Outline>,
}

impl ProcessSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(mut self, name: &str, valid_type: Option<&str>, required: bool, help: &str) -> Self {
        self.inputs.insert(
            name.to_string(),
            Port { valid_type: valid_type.map(str::to_string), required, help: help.to_string() },
        );
        self
    }

    pub fn output(mut self, name: &str, valid_type: Option<&str>, required: bool, help: &str) -> Self {
        self.outputs.insert(
            name.to_string(),
            Port { valid_type: valid_type.map(str::to_string), required, help: help.to_string() },
        );
        self
    }

    pub fn outline(mut self, outline: Outline) -> Self {
        self.outline = Some(outline);
        self
    }

    /// Checks port names and kinds; outline names are checked by the owner
    /// that knows its steps.
    pub fn check(&self) -> Result<()> {
        for (name, port) in self.inputs.iter().chain(&self.outputs) {
            LinkLabel::new(name).map_err(|e| Error::Spec(e.to_string()))?;
            if let Some(k) = &port.valid_type {
                NodeKind::new(k)?;
            }
        }
        Ok(())
    }

    /// Validates concrete inputs: no unknown names, required ones present,
    /// kinds within the declared subtree.
    pub fn validate_inputs(&self, inputs: &Inputs) -> Result<()> {
        for name in inputs.keys() {
            if !self.inputs.contains_key(name) {
                return Err(Error::Spec(format!("unexpected input `{name}`")));
            }
        }
        for (name, port) in &self.inputs {
            match inputs.get(name) {
                None if port.required => return Err(Error::Spec(format!("missing required input `{name}`"))),
                None => {}
                Some(node) => check_kind(name, port, node.kind())?,
            }
        }
        Ok(())
    }

    pub fn validate_output(&self, name: &str, kind: &NodeKind) -> Result<()> {
        match self.outputs.get(name) {
            Some(port) => check_kind(name, port, kind),
            None => Ok(()),
        }
    }

    /// Human-readable description of the interface.
    pub fn describe(&self) -> Value {
        let ports = |m: &BTreeMap<String, Port>| -> Value {
            m.iter()
                .map(|(k, p)| (k.clone(), json!({"valid_type": p.valid_type, "required": p.required, "help": p.help})))
                .collect::<serde_json::Map<_, _>>()
                .into()
        };
        json!({
            "inputs": ports(&self.inputs),
            "outputs": ports(&self.outputs),
            "outline": self.outline.as_ref().map(|o| o.render()),
        })
    }
}

fn check_kind(name: &str, port: &Port, kind: &NodeKind) -> Result<()> {
    if let Some(valid) = &port.valid_type {
        let valid = NodeKind::new(valid)?;
        if !kind.is_a(&valid) {
            return Err(Error::Spec(format!("port `{name}` expects {valid}, got {kind}")));
        }
    }
    if !kind.is_data() {
        return Err(Error::Spec(format!("port `{name}` needs a data node, got {kind}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Node;

    fn spec() -> ProcessSpec {
        ProcessSpec::new().input("x", Some(NodeKind::INT), true, "first").input("y", None, false, "second")
    }

    #[test]
    fn missing_unknown_and_mistyped_inputs() {
        let s = spec();
        let mut inputs = Inputs::new();
        assert!(matches!(s.validate_inputs(&inputs), Err(Error::Spec(_))));
        inputs.insert("x".into(), Node::str("no"));
        assert!(s.validate_inputs(&inputs).is_err());
        inputs.insert("x".into(), Node::int(1));
        s.validate_inputs(&inputs).unwrap();
        inputs.insert("z".into(), Node::int(1));
        assert!(s.validate_inputs(&inputs).is_err());
    }

    #[test]
    fn describe_lists_ports() {
        let d = spec().describe();
        assert_eq!(d["inputs"]["x"]["required"], json!(true));
        assert_eq!(d["inputs"]["y"]["valid_type"], Value::Null);
    }
}
