use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use provflow::graph::{check_data_provenance_acyclic, validate_link, LinkError, MemGraph, Violation};
use provflow::{Link, LinkType, NodeKind};
use provflow::fixtures::violation_cases;
use provflow::oracle::broken_rules;
use uuid::Uuid;

const KINDS: [&str; 6] = [
    NodeKind::INT,
    NodeKind::DICT,
    NodeKind::CALCFUNCTION,
    NodeKind::CALCJOB,
    NodeKind::WORKFUNCTION,
    NodeKind::WORKCHAIN,
];
const LABELS: [&str; 3] = ["a", "b", "c"];

fn node(g: &mut MemGraph, kind: &str) -> Uuid {
    g.add_node(NodeKind::builtin(kind))
}

fn link(s: Uuid, t: Uuid, ty: LinkType, label: &str) -> Link {
    Link::new(s, t, ty, label).unwrap()
}

fn rule_of(e: LinkError) -> &'static str {
    match e {
        LinkError::Violation(v) => v.rule(),
        other => panic!("expected a rule violation, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_sequences_follow_the_rules_and_stay_acyclic(
        kinds in prop::collection::vec(0..KINDS.len(), 2..10),
        ops in prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0..6usize, 0..LABELS.len()), 1..40),
    ) {
        let mut g = MemGraph::new();
        let mut kind_of = HashMap::new();
        let mut uuids = Vec::new();
        for k in kinds {
            let kind = NodeKind::builtin(KINDS[k]);
            let u = g.add_node(kind.clone());
            kind_of.insert(u, kind);
            uuids.push(u);
        }
        for (s, t, ty, label) in ops {
            let link = Link::new(*s.get(&uuids), *t.get(&uuids), LinkType::ALL[ty], LABELS[label]).unwrap();
            let expected = broken_rules(&kind_of, g.links(), &link);
            match g.insert_link(link.clone()) {
                Ok(()) => prop_assert!(expected.is_empty(), "accepted {link:?} breaking {expected:?}"),
                Err(e) => {
                    let rule = rule_of(e);
                    prop_assert!(expected.contains(rule), "rejected {link:?} for {rule}, expected one of {expected:?}");
                }
            }
            prop_assert_eq!(check_data_provenance_acyclic(&g).unwrap(), Ok(()));
        }
    }
}

#[test]
fn every_constructed_violation_is_rejected_with_its_rule() {
    let cases = violation_cases();
    assert!(cases.len() >= 30, "{} cases", cases.len());
    let mut seen = BTreeSet::new();
    for (g, candidate, rule) in cases {
        let got = rule_of(validate_link(&g, &candidate).expect_err(&format!("{candidate:?} accepted")));
        assert_eq!(got, rule, "{candidate:?}");
        seen.insert(rule);
    }
    let all: BTreeSet<_> =
        ["acyclicity", "caller-cardinality", "creator-cardinality", "endpoint-kind", "label-uniqueness", "self-link"].into();
    assert_eq!(seen, all);
}

#[test]
fn returning_an_input_is_legal_and_not_a_cycle() {
    let mut g = MemGraph::new();
    let (d, w) = (node(&mut g, NodeKind::INT), node(&mut g, NodeKind::WORKFUNCTION));
    g.insert_link(link(d, w, LinkType::InputWork, "x")).unwrap();
    g.insert_link(link(w, d, LinkType::Return, "result")).unwrap();
    assert_eq!(check_data_provenance_acyclic(&g).unwrap(), Ok(()));
}

#[test]
fn invalid_label_is_its_own_violation() {
    assert!(matches!(Link::new(Uuid::new_v4(), Uuid::new_v4(), LinkType::Create, "Bad Label"), Err(Violation::InvalidLabel(_))));
}
