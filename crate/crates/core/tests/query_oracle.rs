use std::collections::BTreeSet;

use provflow::fixtures;
use provflow::oracle::{self, Snapshot};
use provflow::query::{self, Pattern, QueryPlan};
use provflow::{NodeKind, Store};

fn store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path()).unwrap();
    (dir, s)
}

#[test]
fn random_graphs_match_the_exhaustive_enumerator() {
    let mut nonempty = 0;
    for seed in 0..120u64 {
        let (_dir, s) = store();
        let mut rng = fixtures::rng(seed);
        let n = 5 + (seed as usize % 26);
        s.write(|tx| fixtures::random_graph(tx, &mut rng, n)).unwrap();
        let snap = s.read(|tx| Snapshot::load(tx)).unwrap();
        for _ in 0..4 {
            let plan = fixtures::random_plan(&mut rng, 3);
            let expected = oracle::embeddings(&snap, &plan);
            let (got, rows, count) =
                s.read(|tx| Ok((query::embeddings(tx, &plan)?, query::all(tx, &plan)?, query::count(tx, &plan)?))).unwrap();
            assert_eq!(got, expected, "seed {seed}, plan {}", plan.to_json());
            assert_eq!(rows, oracle::rows(&snap, &plan, &expected));
            assert_eq!(count, expected.len());
            nonempty += usize::from(!expected.is_empty());
        }
    }
    assert!(nonempty > 100, "only {nonempty} plans had matches");
}

#[test]
fn fig4_query_has_exactly_four_embeddings() {
    let (_dir, s) = store();
    let f = s.write(fixtures::fig4).unwrap();
    let plan = fixtures::fig4_plan();
    let rows = s.read(|tx| query::all(tx, &plan)).unwrap();
    assert_eq!(rows.len(), 4);
    let snap = s.read(|tx| Snapshot::load(tx)).unwrap();
    assert_eq!(oracle::embeddings(&snap, &plan).len(), 4);
    let pairs: BTreeSet<(String, String)> =
        rows.iter().map(|r| (r[0].as_str().unwrap().to_string(), r[1].as_str().unwrap().to_string())).collect();
    let expected: BTreeSet<(String, String)> = [
        (f.initial, f.relax),
        (f.initial, f.scf),
        (f.initial, f.distance),
        (f.relaxed, f.distance),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    assert_eq!(pairs, expected);
}

#[test]
fn s1_query_returns_threshold_energy_pairs() {
    let (_dir, s) = store();
    let expected = s.write(fixtures::s1).unwrap();
    let plan = fixtures::s1_plan();
    let rows = s.read(|tx| query::all(tx, &plan)).unwrap();
    assert!(rows.iter().all(|r| r.len() == 2));
    let mut got: Vec<(f64, f64)> = rows.iter().map(|r| (r[0].as_f64().unwrap(), r[1].as_f64().unwrap())).collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut want = expected.clone();
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, want);
    assert_eq!(got.len(), 3);
}

#[test]
fn workflow_kind_matches_both_workflow_flavours() {
    let (_dir, s) = store();
    let mut rng = fixtures::rng(7);
    s.write(|tx| fixtures::random_graph(tx, &mut rng, 30)).unwrap();
    let ids = |kind: &str| -> BTreeSet<i64> {
        let plan = QueryPlan::new().append(Pattern::new("n").kind(kind).project("id")).unwrap();
        s.read(|tx| query::all(tx, &plan)).unwrap().into_iter().map(|r| r[0].as_i64().unwrap()).collect()
    };
    let union: BTreeSet<i64> = ids(NodeKind::WORKCHAIN).union(&ids(NodeKind::WORKFUNCTION)).cloned().collect();
    assert!(!union.is_empty());
    assert_eq!(ids(NodeKind::WORKFLOW), union);
}

#[test]
fn growing_the_graph_never_removes_embeddings() {
    let (_dir, s) = store();
    let mut rng = fixtures::rng(11);
    s.write(|tx| fixtures::random_graph(tx, &mut rng, 15)).unwrap();
    let plans: Vec<QueryPlan> = (0..20).map(|_| fixtures::random_plan(&mut rng, 3)).collect();
    let before: Vec<BTreeSet<_>> =
        plans.iter().map(|p| s.read(|tx| query::embeddings(tx, p)).unwrap().into_iter().collect()).collect();
    s.write(|tx| fixtures::random_graph(tx, &mut rng, 10)).unwrap();
    for (p, b) in plans.iter().zip(before) {
        let after: BTreeSet<_> = s.read(|tx| query::embeddings(tx, p)).unwrap().into_iter().collect();
        assert!(b.is_subset(&after));
    }
}
