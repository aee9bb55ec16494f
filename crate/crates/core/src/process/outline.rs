//! Outline programs of work chains and their program counter.
//!
//! The program counter is a path of frames. Each frame holds the index of
//! the next instruction in its block and which body of the enclosing
//! instruction the block is (`0` for a while body or a then-branch, `1` for
//! an else-branch). Predicates are re-evaluated whenever control reaches a
//! `While` or `If`, so a resumed counter needs no cached predicate results.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instruction {
    Step(String),
    While { predicate: String, body: Vec<Instruction> },
    If { predicate: String, then: Vec<Instruction>, otherwise: Vec<Instruction> },
    Return,
}

pub fn step(name: &str) -> Instruction {
    Instruction::Step(name.to_string())
}

pub fn while_(predicate: &str, body: Vec<Instruction>) -> Instruction {
    Instruction::While { predicate: predicate.to_string(), body }
}

pub fn if_(predicate: &str, then: Vec<Instruction>, otherwise: Vec<Instruction>) -> Instruction {
    Instruction::If { predicate: predicate.to_string(), then, otherwise }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub branch: u8,
}

pub type Pc = Vec<Frame>;

pub fn start() -> Pc {
    vec![Frame { index: 0, branch: 0 }]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outline(pub Vec<Instruction>);

/// Where control goes next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Next {
    /// Run this step; the counter points at it.
    Step(String, Pc),
    Done,
}

impl Outline {
    pub fn new(instructions: Vec<Instruction>) -> Self {
        Outline(instructions)
    }

    pub fn step_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        collect(&self.0, &mut out, &mut BTreeSet::new());
        out
    }

    pub fn predicate_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        collect(&self.0, &mut BTreeSet::new(), &mut out);
        out
    }

    fn block(&self, pc: &[Frame]) -> Option<&[Instruction]> {
        let mut block: &[Instruction] = &self.0;
        for (i, frame) in pc.iter().enumerate().skip(1) {
            let parent = block.get(pc[i - 1].index)?;
            block = match (parent, frame.branch) {
                (Instruction::While { body, .. }, 0) => body,
                (Instruction::If { then, .. }, 0) => then,
                (Instruction::If { otherwise, .. }, 1) => otherwise,
                _ => return None,
            };
        }
        Some(block)
    }

    /// Moves from `pc` to the next step to run, evaluating predicates as
    /// control passes `While`/`If` instructions.
    pub fn advance<E>(&self, mut pc: Pc, predicate: &mut dyn FnMut(&str) -> Result<bool, E>) -> Result<Next, E> {
        loop {
            let Some(block) = self.block(&pc) else { return Ok(Next::Done) };
            let idx = pc.last().expect("counter is never empty").index;
            if idx >= block.len() {
                if pc.len() == 1 {
                    return Ok(Next::Done);
                }
                pc.pop();
                let parent_block = self.block(&pc).expect("parent block exists");
                let last = pc.last_mut().expect("parent frame");
                if !matches!(parent_block[last.index], Instruction::While { .. }) {
                    last.index += 1;
                }
                continue;
            }
            match &block[idx] {
                Instruction::Step(name) => return Ok(Next::Step(name.clone(), pc)),
                Instruction::Return => return Ok(Next::Done),
                Instruction::While { predicate: p, .. } => {
                    if predicate(p)? {
                        pc.push(Frame { index: 0, branch: 0 });
                    } else {
                        pc.last_mut().unwrap().index += 1;
                    }
                }
                Instruction::If { predicate: p, .. } => {
                    let branch = if predicate(p)? { 0 } else { 1 };
                    pc.push(Frame { index: 0, branch });
                }
            }
        }
    }

    /// Counter just past the step at `pc`.
    pub fn after(pc: &Pc) -> Pc {
        let mut next = pc.clone();
        next.last_mut().expect("counter is never empty").index += 1;
        next
    }

    /// Nested structure for documentation output.
    pub fn render(&self) -> Value {
        fn render_block(block: &[Instruction]) -> Value {
            block
                .iter()
                .map(|i| match i {
                    Instruction::Step(s) => json!(s),
                    Instruction::Return => json!("return"),
                    Instruction::While { predicate, body } => json!({"while": predicate, "body": render_block(body)}),
                    Instruction::If { predicate, then, otherwise } => {
                        json!({"if": predicate, "then": render_block(then), "else": render_block(otherwise)})
                    }
                })
                .collect()
        }
        render_block(&self.0)
    }
}

fn collect(block: &[Instruction], steps: &mut BTreeSet<String>, preds: &mut BTreeSet<String>) {
    for i in block {
        match i {
            Instruction::Step(s) => {
                steps.insert(s.clone());
            }
            Instruction::Return => {}
            Instruction::While { predicate, body } => {
                preds.insert(predicate.clone());
                collect(body, steps, preds);
            }
            Instruction::If { predicate, then, otherwise } => {
                preds.insert(predicate.clone());
                collect(then, steps, preds);
                collect(otherwise, steps, preds);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    /// Runs the outline to completion with a counter-driven predicate.
    fn trace(outline: &Outline, limit: u32, resume_each_step: bool) -> Vec<String> {
        let mut steps = Vec::new();
        let mut iteration = 0u32;
        let mut pc = start();
        loop {
            let mut pred = |p: &str| -> Result<bool, Infallible> {
                Ok(match p {
                    "more" => iteration < limit,
                    "even" => iteration % 2 == 0,
                    _ => unreachable!(),
                })
            };
            match outline.advance(pc.clone(), &mut pred).unwrap() {
                Next::Done => return steps,
                Next::Step(name, at) => {
                    if name == "iterate" {
                        iteration += 1;
                    }
                    steps.push(name);
                    pc = Outline::after(&at);
                    if resume_each_step {
                        let text = serde_json::to_string(&pc).unwrap();
                        pc = serde_json::from_str(&text).unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn while_loop_runs_body_until_predicate_fails() {
        let o = Outline::new(vec![step("init"), while_("more", vec![step("iterate")]), step("results")]);
        assert_eq!(trace(&o, 3, false), ["init", "iterate", "iterate", "iterate", "results"]);
        assert_eq!(trace(&o, 0, false), ["init", "results"]);
        assert_eq!(trace(&o, 3, true), trace(&o, 3, false));
    }

    #[test]
    fn if_inside_while() {
        let o = Outline::new(vec![while_(
            "more",
            vec![if_("even", vec![step("a")], vec![step("b")]), step("iterate")],
        )]);
        assert_eq!(trace(&o, 3, true), ["a", "iterate", "b", "iterate", "a", "iterate"]);
        assert_eq!(o.step_names().len(), 3);
        assert_eq!(o.predicate_names().len(), 2);
    }

    #[test]
    fn return_stops_early() {
        let o = Outline::new(vec![step("a"), Instruction::Return, step("b")]);
        assert_eq!(trace(&o, 0, false), ["a"]);
    }
}
