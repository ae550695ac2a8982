//! Fixture values checked against the naive oracles in `common`.

mod common;

use std::collections::BTreeSet;

use common::*;
use grim_core::graph::{build_render_payload, parse_render_payload, reconcile};
use grim_core::validate::{longest_common_run, ViolationCode, MAX_COMMON_RUN};
use grim_core::{validate, Severity};

fn ids(v: impl IntoIterator<Item = u32>) -> BTreeSet<u32> {
    v.into_iter().collect()
}

#[test]
fn oracle_self_check() {
    assert_eq!(oracle_longest_run(&[1, 2, 3], &[0, 1, 2, 3, 4]), 3);
    assert_eq!(oracle_longest_run(&[1, 2], &[2, 1]), 1);
    assert_eq!(oracle_longest_run(&[], &[1]), 0);
}

#[test]
fn cyberpunk_sample_runs_and_common_beats() {
    let b = cyberpunk_sample();
    let report = validate(&b);

    let all = seqs(&b);
    let mut max = 0;
    for x in 0..all.len() {
        for y in x + 1..all.len() {
            let o = oracle_longest_run(&all[x].1, &all[y].1);
            let lib = longest_common_run(&b.storylines[x].beats, &b.storylines[y].beats).len;
            assert_eq!(lib, o, "pair {:?}", (all[x].0, all[y].0));
            max = max.max(o);
        }
    }
    assert_eq!(max, 3);
    assert_eq!(report.stats.max_pairwise_run, max);
    assert!(oracle_run_violations(&b, MAX_COMMON_RUN).is_empty());

    let common = oracle_common(&b);
    assert_eq!(common, ids([3]));
    assert_eq!(
        report.stats.computed_common_beats.iter().map(|b| b.0).collect::<BTreeSet<_>>(),
        common
    );
    assert_eq!(report.errors().count(), 0, "{:?}", report.violations);
    assert_eq!(
        report.codes(),
        [ViolationCode::CommonCount, ViolationCode::CommonDeclaredMismatch].into()
    );
    assert_eq!(b.beats.len(), 35);
    assert!(b.beats.len() >= 2 * b.storylines.len());
}

#[test]
fn minecraft_draft_violations_follow_oracles() {
    let b = minecraft_draft();
    let report = validate(&b);

    let runs = oracle_run_violations(&b, MAX_COMMON_RUN);
    assert_eq!(runs.get(&(1, 3)), Some(&4));
    let reported: BTreeSet<(u32, u32)> = report
        .find(ViolationCode::RunLength)
        .map(|v| (v.subjects.storylines[0], v.subjects.storylines[1]))
        .collect();
    assert_eq!(reported, runs.keys().copied().collect());
    for v in report.find(ViolationCode::RunLength) {
        let pair = (v.subjects.storylines[0], v.subjects.storylines[1]);
        assert_eq!(v.subjects.beats.len(), runs[&pair]);
        assert_eq!(v.severity, Severity::Error);
    }

    let budget: Vec<_> = report.find(ViolationCode::BeatBudget).collect();
    assert_eq!(budget.len(), 1);
    assert!(b.beats.len() < 2 * b.storylines.len());
    assert_eq!((b.beats.len(), 2 * b.storylines.len()), (8, 16));

    let two_way = oracle_two_way(&b);
    assert!(two_way.contains(&(2, 3)));
    let cycles: Vec<_> = report.find(ViolationCode::Cycle).collect();
    assert_eq!(cycles.len(), 1);
    assert_eq!(cycles[0].severity, Severity::Warning);
    let cyc: BTreeSet<u32> = cycles[0].subjects.beats.iter().map(|b| b.0).collect();
    for (a, z) in &two_way {
        assert!(cyc.contains(a) && cyc.contains(z));
        assert!(cycles[0].detail.contains(&format!("{a}<->{z}")));
    }

    assert_eq!(
        report.stats.computed_common_beats.iter().map(|b| b.0).collect::<BTreeSet<_>>(),
        oracle_common(&b)
    );
}

#[test]
fn minecraft_draft_payload_against_edge_union() {
    let b = minecraft_draft();
    let payload = build_render_payload(&b).unwrap();

    let nodes = oracle_nodes(&b);
    assert_eq!(nodes.len(), b.used_beats().len() + 2);
    assert_eq!(nodes.len(), 10);
    let lib_nodes: BTreeSet<String> = payload.node_ids().into_iter().collect();
    assert_eq!(lib_nodes, nodes);
    let order = payload.node_ids();
    assert_eq!(&order[8..], ["START_1", "END_1"]);

    let edges = oracle_edges(&b);
    assert_eq!(edges.len(), 19);
    let lib_edges: BTreeSet<(String, String)> = payload
        .edge_set()
        .into_iter()
        .map(|(x, y)| (x.render_id(), y.render_id()))
        .collect();
    assert_eq!(lib_edges, edges);

    // the hand-written payload from the worked example
    let text = read_fixture("minecraft_draft_payload.txt");
    assert_eq!(node_keys_in_payload_text(&text), order);
    let written = edges_in_payload_text(&text);
    let missing: BTreeSet<_> = edges.difference(&written).cloned().collect();
    let extra: BTreeSet<_> = written.difference(&edges).cloned().collect();
    assert_eq!(missing.len(), 6);
    assert!(extra.is_empty());

    let (candidate, _) = parse_render_payload(&text).unwrap();
    let (report, repaired) = reconcile(&candidate, &b).unwrap();
    let lib_missing: BTreeSet<(String, String)> = report
        .missing_edges
        .iter()
        .map(|(x, y)| (x.render_id(), y.render_id()))
        .collect();
    assert_eq!(lib_missing, missing);
    assert!(report.extra_edges.is_empty());
    assert!(report.missing_nodes.is_empty() && report.extra_nodes.is_empty());
    assert_eq!(repaired.edge_set(), payload.edge_set());
}

#[test]
fn frankenstein_shape() {
    let b = frankenstein();
    let payload = build_render_payload(&b).unwrap();
    let nodes = oracle_nodes(&b);
    assert_eq!(nodes.iter().filter(|n| n.starts_with("START_")).count(), 1);
    assert_eq!(nodes.iter().filter(|n| n.starts_with("END_")).count(), 2);
    assert_eq!(payload.nodes.len(), nodes.len());
    assert_eq!(payload.edge_set().len(), oracle_edges(&b).len());
    assert_eq!(oracle_common(&b), ids([1, 3]));
    assert!(!validate(&b).has_errors());
}
