//! Reference graphs used by tests, benchmarks and documentation, plus
//! seeded random graph generators.

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;
use uuid::Uuid;

use crate::error::Result;
use crate::graph::{Link, LinkType, MemGraph};
use crate::kind::{register_data_kind, NodeKind};
use crate::node::Node;
use crate::query::{FilterExpr, Op, Pattern, QueryPlan, Relation};
use crate::store::Tx;

pub const STRUCTURE: &str = "data.structure";

fn stored(tx: &Tx<'_>, mut node: Node) -> Result<Uuid> {
    tx.store_node(&mut node)?;
    Ok(node.uuid())
}

fn process(kind: &str, label: &str) -> Node {
    Node::new(NodeKind::builtin(kind)).with_label(label)
}

fn link(tx: &Tx<'_>, s: Uuid, t: Uuid, ty: LinkType, label: &str) -> Result<i64> {
    tx.insert_link(&Link::new(s, t, ty, label)?)
}

/// The workflow computing `(x + y) * z`: W1 calls C1 (sum, creating D4) and
/// C2 (product, creating D5) and returns D5.
#[derive(Debug, Clone, Copy)]
pub struct Fig2 {
    pub w1: Uuid,
    pub c1: Uuid,
    pub c2: Uuid,
    pub d: [Uuid; 5],
}

pub fn fig2(tx: &Tx<'_>, x: i64, y: i64, z: i64) -> Result<Fig2> {
    let d1 = stored(tx, Node::int(x).with_label("D1"))?;
    let d2 = stored(tx, Node::int(y).with_label("D2"))?;
    let d3 = stored(tx, Node::int(z).with_label("D3"))?;
    let w1 = stored(tx, process(NodeKind::WORKFUNCTION, "W1"))?;
    let c1 = stored(tx, process(NodeKind::CALCFUNCTION, "C1"))?;
    let c2 = stored(tx, process(NodeKind::CALCFUNCTION, "C2"))?;
    for (d, l) in [(d1, "x"), (d2, "y"), (d3, "z")] {
        link(tx, d, w1, LinkType::InputWork, l)?;
    }
    link(tx, w1, c1, LinkType::CallCalc, "sum")?;
    link(tx, d1, c1, LinkType::InputCalc, "x")?;
    link(tx, d2, c1, LinkType::InputCalc, "y")?;
    let d4 = stored(tx, Node::int(x + y).with_label("D4"))?;
    link(tx, c1, d4, LinkType::Create, "result")?;
    link(tx, w1, c2, LinkType::CallCalc, "product")?;
    link(tx, d4, c2, LinkType::InputCalc, "x")?;
    link(tx, d3, c2, LinkType::InputCalc, "y")?;
    let d5 = stored(tx, Node::int((x + y) * z).with_label("D5"))?;
    link(tx, c2, d5, LinkType::Create, "result")?;
    link(tx, w1, d5, LinkType::Return, "result")?;
    Ok(Fig2 { w1, c1, c2, d: [d1, d2, d3, d4, d5] })
}

/// A relaxation, an SCF run and a structure comparison sharing one initial
/// structure.
#[derive(Debug, Clone, Copy)]
pub struct Fig4 {
    pub initial: Uuid,
    pub relaxed: Uuid,
    pub relax: Uuid,
    pub scf: Uuid,
    pub distance: Uuid,
}

fn structure(cell: f64) -> Result<Node> {
    let kind = register_data_kind(STRUCTURE)?;
    let mut n = Node::new(kind);
    n.set_attribute("cell", json!([[cell, 0.0, 0.0], [0.0, cell, 0.0], [0.0, 0.0, cell]]))?;
    n.set_attribute("symbols", json!(["Si", "Si"]))?;
    Ok(n)
}

pub fn fig4(tx: &Tx<'_>) -> Result<Fig4> {
    let initial = stored(tx, structure(5.43)?.with_label("initial"))?;
    let relax_params = stored(tx, Node::dict(json!({"type": "relax", "threshold": 0.01}))?)?;
    let scf_params = stored(tx, Node::dict(json!({"type": "scf", "ecut": 30}))?)?;

    let relax = stored(tx, process(NodeKind::CALCJOB, "relax"))?;
    link(tx, initial, relax, LinkType::InputCalc, "structure")?;
    link(tx, relax_params, relax, LinkType::InputCalc, "parameters")?;
    let relaxed = stored(tx, structure(5.47)?.with_label("relaxed"))?;
    link(tx, relax, relaxed, LinkType::Create, "structure")?;
    let relax_out = stored(tx, Node::dict(json!({"energy": -10.84}))?)?;
    link(tx, relax, relax_out, LinkType::Create, "results")?;

    let scf = stored(tx, process(NodeKind::CALCJOB, "scf"))?;
    link(tx, initial, scf, LinkType::InputCalc, "structure")?;
    link(tx, scf_params, scf, LinkType::InputCalc, "parameters")?;
    let scf_out = stored(tx, Node::dict(json!({"energy": -10.79}))?)?;
    link(tx, scf, scf_out, LinkType::Create, "results")?;

    let distance = stored(tx, process(NodeKind::CALCFUNCTION, "distance"))?;
    link(tx, initial, distance, LinkType::InputCalc, "first")?;
    link(tx, relaxed, distance, LinkType::InputCalc, "second")?;
    let dist_out = stored(tx, Node::dict(json!({"distance": 0.04}))?)?;
    link(tx, distance, dist_out, LinkType::Create, "result")?;
    Ok(Fig4 { initial, relaxed, relax, scf, distance })
}

/// Structure used as input of a calculation that created a dictionary.
pub fn fig4_plan() -> QueryPlan {
    let patterns = [
        Pattern::new("structure").kind(STRUCTURE).project("uuid"),
        Pattern::new("calculation")
            .kind(NodeKind::CALCULATION)
            .with_incoming("structure")
            .edge_filter("type", Op::Eq, json!("INPUT_CALC"))
            .project("uuid"),
        Pattern::new("output")
            .kind(NodeKind::DICT)
            .with_incoming("calculation")
            .edge_filter("type", Op::Eq, json!("CREATE"))
            .project("uuid"),
    ];
    patterns.into_iter().try_fold(QueryPlan::new(), QueryPlan::append).expect("static plan is valid")
}

/// Calculations with `my-code`, relax parameters and a `results` output,
/// mixed with calculations that miss one of the three.
pub fn s1(tx: &Tx<'_>) -> Result<Vec<(f64, f64)>> {
    let code = stored(tx, Node::code("my-code", "localhost", "pw.x"))?;
    let other = stored(tx, Node::code("other-code", "localhost", "cp.x"))?;
    let mut expected = Vec::new();
    let cases: [(Uuid, &str, &str, f64, f64); 6] = [
        (code, "relax", "results", 0.1, -10.70),
        (code, "relax", "results", 0.01, -10.84),
        (code, "relax", "results", 0.001, -10.85),
        (other, "relax", "results", 0.01, -11.00),
        (code, "scf", "results", 0.01, -12.00),
        (code, "relax", "log", 0.01, -13.00),
    ];
    for (i, (c, ty, out_label, threshold, energy)) in cases.into_iter().enumerate() {
        let calc = stored(tx, process(NodeKind::CALCJOB, &format!("calc{i}")))?;
        link(tx, c, calc, LinkType::InputCalc, "code")?;
        let params = stored(tx, Node::dict(json!({"type": ty, "threshold": threshold}))?)?;
        link(tx, params, calc, LinkType::InputCalc, "parameters")?;
        let out = stored(tx, Node::dict(json!({"energy": energy}))?)?;
        link(tx, calc, out, LinkType::Create, out_label)?;
        if c == code && ty == "relax" && out_label == "results" {
            expected.push((threshold, energy));
        }
    }
    Ok(expected)
}

/// Energy as a function of relaxation threshold for calculations run with
/// `my-code`.
pub fn s1_plan() -> QueryPlan {
    let patterns = [
        Pattern::new("calculation").kind(NodeKind::CALCJOB),
        Pattern::new("code").kind(NodeKind::CODE).filter("label", Op::Eq, json!("my-code")).with_outgoing("calculation"),
        Pattern::new("parameters")
            .kind(NodeKind::DICT)
            .with_outgoing("calculation")
            .filter("attributes.type", Op::Eq, json!("relax"))
            .project("attributes.threshold"),
        Pattern::new("results")
            .kind(NodeKind::DICT)
            .with_incoming("calculation")
            .edge_filter("label", Op::Eq, json!("results"))
            .project("attributes.energy"),
    ];
    patterns.into_iter().try_fold(QueryPlan::new(), QueryPlan::append).expect("static plan is valid")
}

/// Stores `n_trees` disjoint trees of `depth` levels below the root, each
/// vertex with `breadth` children. Levels alternate data and calculation
/// nodes, so every edge is an INPUT_CALC or CREATE link. Returns the roots.
pub fn trees(tx: &Tx<'_>, n_trees: usize, breadth: usize, depth: usize) -> Result<Vec<Uuid>> {
    let mut roots = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let root = stored(tx, Node::int(t as i64))?;
        roots.push(root);
        let mut level = vec![root];
        for d in 0..depth {
            let mut next = Vec::with_capacity(level.len() * breadth);
            for &parent in &level {
                for b in 0..breadth {
                    let child = if d % 2 == 0 {
                        let c = stored(tx, Node::new(NodeKind::builtin(NodeKind::CALCFUNCTION)))?;
                        link(tx, parent, c, LinkType::InputCalc, "input")?;
                        c
                    } else {
                        let c = stored(tx, Node::int(b as i64))?;
                        link(tx, parent, c, LinkType::Create, &format!("out_{b}"))?;
                        c
                    };
                    next.push(child);
                }
            }
            level = next;
        }
    }
    Ok(roots)
}

const RANDOM_KINDS: [&str; 7] = [
    NodeKind::INT,
    NodeKind::INT,
    NodeKind::DICT,
    NodeKind::CALCFUNCTION,
    NodeKind::CALCJOB,
    NodeKind::WORKFUNCTION,
    NodeKind::WORKCHAIN,
];
const RANDOM_LABELS: [&str; 3] = ["a", "b", "c"];

/// A random graph of `n` nodes with about `2n` attempted links of random
/// type between endpoints of the right families, keeping those the store
/// accepts. Int nodes hold values 0..5.
pub fn random_graph(tx: &Tx<'_>, rng: &mut StdRng, n: usize) -> Result<Vec<Uuid>> {
    let mut nodes = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = *RANDOM_KINDS.choose(rng).expect("non-empty");
        let mut node = match kind {
            NodeKind::INT => Node::int(rng.random_range(0..5)),
            NodeKind::DICT => Node::dict(json!({"k": rng.random_range(0..5)}))?,
            k => Node::new(NodeKind::builtin(k)),
        };
        node.set_label(*["p", "q"].choose(rng).expect("non-empty"))?;
        kinds.push(node.kind().clone());
        nodes.push(stored(tx, node)?);
    }
    let family = |pred: fn(&NodeKind) -> bool| -> Vec<Uuid> {
        nodes.iter().zip(&kinds).filter(|(_, k)| pred(k)).map(|(u, _)| *u).collect()
    };
    let data = family(NodeKind::is_data);
    let calcs = family(NodeKind::is_calculation);
    let flows = family(NodeKind::is_workflow);
    for _ in 0..2 * n {
        let ty = *LinkType::ALL.choose(rng).expect("non-empty");
        let (from, to) = match ty {
            LinkType::InputCalc => (&data, &calcs),
            LinkType::InputWork => (&data, &flows),
            LinkType::Create => (&calcs, &data),
            LinkType::Return => (&flows, &data),
            LinkType::CallCalc => (&flows, &calcs),
            LinkType::CallWork => (&flows, &flows),
        };
        let (Some(&s), Some(&t)) = (from.choose(rng), to.choose(rng)) else { continue };
        let label = *RANDOM_LABELS.choose(rng).expect("non-empty");
        let _ = link(tx, s, t, ty, label);
    }
    Ok(nodes)
}

/// A random data-provenance DAG of `n` nodes: each node is a calculation
/// with probability 1/3, links only go from lower to higher creation order.
pub fn random_dag(tx: &Tx<'_>, rng: &mut StdRng, n: usize, edge_factor: f64) -> Result<Vec<Uuid>> {
    let mut nodes = Vec::with_capacity(n);
    let mut is_calc = Vec::with_capacity(n);
    for i in 0..n {
        let calc = rng.random_bool(1.0 / 3.0);
        let node = if calc { Node::new(NodeKind::builtin(NodeKind::CALCFUNCTION)) } else { Node::int(i as i64) };
        nodes.push(stored(tx, node)?);
        is_calc.push(calc);
    }
    let attempts = (n as f64 * edge_factor) as usize;
    for a in 0..attempts {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i >= j || is_calc[i] == is_calc[j] {
            continue;
        }
        let ty = if is_calc[i] { LinkType::Create } else { LinkType::InputCalc };
        let _ = link(tx, nodes[i], nodes[j], ty, &format!("l{a}"));
    }
    Ok(nodes)
}

const PLAN_KINDS: [Option<&str>; 7] = [
    None,
    Some(NodeKind::DATA),
    Some(NodeKind::INT),
    Some(NodeKind::PROCESS),
    Some(NodeKind::CALCULATION),
    Some(NodeKind::WORKFLOW),
    Some(NodeKind::DICT),
];

/// A random plan of 1..=`max_patterns` vertices over the vocabulary of
/// [`random_graph`].
pub fn random_plan(rng: &mut StdRng, max_patterns: usize) -> QueryPlan {
    let n = rng.random_range(1..=max_patterns);
    let mut plan = QueryPlan::new();
    for i in 0..n {
        let mut p = Pattern::new(format!("t{i}"));
        if let Some(k) = *PLAN_KINDS.choose(rng).expect("non-empty") {
            p = p.kind(k);
        }
        match rng.random_range(0..6) {
            0 => p = p.filter("attributes.value", *[Op::Eq, Op::Lt, Op::Ge].choose(rng).expect("non-empty"), json!(rng.random_range(0..5))),
            1 => p = p.filter("label", Op::Eq, json!(*["p", "q"].choose(rng).expect("non-empty"))),
            _ => {}
        }
        if i > 0 {
            let anchor = format!("t{}", rng.random_range(0..i));
            p = match rng.random_range(0..4) {
                0 => p.with_incoming(&anchor),
                1 => p.with_outgoing(&anchor),
                2 => p.with_ancestors(&anchor),
                _ => p.with_descendants(&anchor),
            };
            let direct = p.edge.as_ref().is_some_and(|e| matches!(e.relation, Relation::WithIncoming | Relation::WithOutgoing));
            if rng.random_bool(0.3) {
                p = if direct {
                    match rng.random_bool(0.5) {
                        true => p.edge_filter("type", Op::Eq, json!(LinkType::ALL.choose(rng).expect("non-empty").as_str())),
                        false => p.edge_filter("label", Op::Eq, json!(*RANDOM_LABELS.choose(rng).expect("non-empty"))),
                    }
                } else {
                    p.edge_filter("depth", Op::Le, json!(rng.random_range(1..4)))
                };
            }
        }
        if rng.random_bool(0.5) {
            p = p.project("attributes.value");
        }
        p = p.project("id");
        plan.push(p).expect("fresh tags");
    }
    plan
}

/// A seeded generator.
pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn mem_node(g: &mut MemGraph, kind: &str) -> Uuid {
    g.add_node(NodeKind::builtin(kind))
}

fn mem_link(s: Uuid, t: Uuid, ty: LinkType, label: &str) -> Link {
    Link::new(s, t, ty, label).expect("valid label")
}

/// Constructed cases, each paired with the rule it must trip.
pub fn violation_cases() -> Vec<(MemGraph, Link, &'static str)> {
    let mut cases = Vec::new();
    let families = [NodeKind::INT, NodeKind::CALCFUNCTION, NodeKind::WORKCHAIN];
    for ty in LinkType::ALL {
        for s in families {
            for t in families {
                let (sk, tk) = (NodeKind::builtin(s), NodeKind::builtin(t));
                if crate::oracle::family_ok(ty, &sk, &tk) {
                    continue;
                }
                let mut g = MemGraph::new();
                let (a, b) = (mem_node(&mut g, s), mem_node(&mut g, t));
                cases.push((g, mem_link(a, b, ty, "a"), "endpoint-kind"));
            }
        }
    }
    for ty in LinkType::ALL {
        let (sk, tk) = match ty {
            LinkType::InputCalc => (NodeKind::INT, NodeKind::CALCJOB),
            LinkType::InputWork => (NodeKind::INT, NodeKind::WORKCHAIN),
            LinkType::Create => (NodeKind::CALCJOB, NodeKind::INT),
            LinkType::Return => (NodeKind::WORKCHAIN, NodeKind::INT),
            LinkType::CallCalc => (NodeKind::WORKCHAIN, NodeKind::CALCJOB),
            LinkType::CallWork => (NodeKind::WORKCHAIN, NodeKind::WORKFUNCTION),
        };
        let mut g = MemGraph::new();
        let (s, t) = (mem_node(&mut g, sk), mem_node(&mut g, tk));
        g.insert_link(mem_link(s, t, ty, "a")).expect("legal link");
        if ty == LinkType::CallWork {
            let w = mem_node(&mut g, NodeKind::WORKCHAIN);
            let mut self_graph = MemGraph::new();
            let only = mem_node(&mut self_graph, NodeKind::WORKCHAIN);
            cases.push((self_graph, mem_link(only, only, ty, "a"), "self-link"));
            cases.push((g, mem_link(w, t, ty, "b"), "caller-cardinality"));
            continue;
        }
        match ty {
            LinkType::InputCalc | LinkType::InputWork => {
                let other = mem_node(&mut g, NodeKind::INT);
                cases.push((g, mem_link(other, t, ty, "a"), "label-uniqueness"));
            }
            LinkType::Create => {
                let other = mem_node(&mut g, NodeKind::CALCFUNCTION);
                let mut g2 = g.clone();
                cases.push((g, mem_link(other, t, ty, "b"), "creator-cardinality"));
                let fresh = mem_node(&mut g2, NodeKind::INT);
                cases.push((g2, mem_link(s, fresh, ty, "a"), "label-uniqueness"));
            }
            LinkType::Return => {
                let fresh = mem_node(&mut g, NodeKind::INT);
                cases.push((g, mem_link(s, fresh, ty, "a"), "label-uniqueness"));
            }
            LinkType::CallCalc => {
                let other = mem_node(&mut g, NodeKind::WORKFUNCTION);
                cases.push((g, mem_link(other, t, ty, "b"), "caller-cardinality"));
            }
            LinkType::CallWork => unreachable!(),
        }
    }
    // A calculation creating its own input, directly and through a chain.
    let mut g = MemGraph::new();
    let (d, c) = (mem_node(&mut g, NodeKind::INT), mem_node(&mut g, NodeKind::CALCJOB));
    g.insert_link(mem_link(d, c, LinkType::InputCalc, "a")).expect("legal link");
    cases.push((g.clone(), mem_link(c, d, LinkType::Create, "a"), "acyclicity"));
    let d2 = mem_node(&mut g, NodeKind::INT);
    g.insert_link(mem_link(c, d2, LinkType::Create, "a")).expect("legal link");
    let c2 = mem_node(&mut g, NodeKind::CALCFUNCTION);
    g.insert_link(mem_link(d2, c2, LinkType::InputCalc, "a")).expect("legal link");
    cases.push((g, mem_link(c2, d, LinkType::Create, "a"), "acyclicity"));
    cases
}

/// Up to three filters over the properties [`random_graph`] varies.
pub fn random_filters(rng: &mut StdRng) -> Vec<FilterExpr> {
    let n = rng.random_range(0..=3);
    (0..n)
        .map(|_| {
            let (path, op, value) = match rng.random_range(0..7) {
                0 => ("kind", Op::Eq, json!(*[NodeKind::INT, NodeKind::DICT, NodeKind::CALCJOB].choose(rng).expect("non-empty"))),
                1 => ("kind", Op::Like, json!(*["data.%", "process.%", "process.workflow.%"].choose(rng).expect("non-empty"))),
                2 => ("label", Op::Eq, json!(*["p", "q"].choose(rng).expect("non-empty"))),
                3 => ("attributes.value", *[Op::Lt, Op::Ge, Op::Ne].choose(rng).expect("non-empty"), json!(rng.random_range(0..5))),
                4 => ("attributes.k", Op::In, json!([rng.random_range(0..5), rng.random_range(0..5)])),
                5 => ("id", Op::Gt, json!(rng.random_range(0..40))),
                _ => ("attributes", Op::HasKey, json!(*["value", "k"].choose(rng).expect("non-empty"))),
            };
            FilterExpr::new(path, op, value).expect("operand suits operator")
        })
        .collect()
}
