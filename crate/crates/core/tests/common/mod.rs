#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use grim_core::model::{AddedNode, BeatId, EditSet, GenerationSpec, StoryBundle, Storyline};
use proptest::collection::{btree_set, vec};
use proptest::prelude::*;
use grim_core::parse_storyline_document;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn replay_dir() -> PathBuf {
    fixtures_dir().join("replay")
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn cyberpunk_spec() -> GenerationSpec {
    GenerationSpec::new("Little Red Riding Hood", "Cyberpunk", 2, 4, 8)
}

pub fn minecraft_spec() -> GenerationSpec {
    GenerationSpec::new("Little Red Riding Hood", "Minecraft", 1, 1, 8)
}

pub fn frankenstein_spec() -> GenerationSpec {
    GenerationSpec::new("Frankenstein", "21st century", 1, 2, 4)
}

pub fn parse_fixture(name: &str, spec: &GenerationSpec) -> StoryBundle {
    parse_storyline_document(&read_fixture(name), spec)
        .into_result()
        .unwrap_or_else(|d| panic!("{name} failed to parse: {d:?}"))
}

pub fn cyberpunk_sample() -> StoryBundle {
    parse_fixture("cyberpunk_sample.txt", &cyberpunk_spec())
}

pub fn minecraft_draft() -> StoryBundle {
    parse_fixture("minecraft_draft.txt", &minecraft_spec())
}

pub fn frankenstein() -> StoryBundle {
    parse_fixture("frankenstein_21st_century.txt", &frankenstein_spec())
}

/// The designer edit from the worked Frankenstein example.
pub fn adam_edit() -> EditSet {
    EditSet {
        nodes_added: vec![AddedNode {
            id: BeatId(18),
            description: "Adam decides to help Dr. Frank on his next project".into(),
        }],
        edges_added: [(BeatId(2), BeatId(18))].into(),
        ..Default::default()
    }
}

// Brute-force oracles. Deliberately naive; they share no code with the
// library beyond plain data types.

/// Longest contiguous shared run by comparing every pair of start offsets
/// and every length.
pub fn oracle_longest_run(a: &[u32], b: &[u32]) -> usize {
    let mut best = 0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            for len in 1..=a.len().min(b.len()) {
                if i + len > a.len() || j + len > b.len() {
                    break;
                }
                if a[i..i + len] == b[j..j + len] && len > best {
                    best = len;
                }
            }
        }
    }
    best
}

pub fn seqs(bundle: &StoryBundle) -> Vec<(u32, Vec<u32>)> {
    bundle
        .storylines
        .iter()
        .map(|s| (s.index, s.beats.iter().map(|b| b.0).collect()))
        .collect()
}

/// Beats present in every storyline, by repeated set intersection.
pub fn oracle_common(bundle: &StoryBundle) -> BTreeSet<u32> {
    let all = seqs(bundle);
    let mut acc: Option<BTreeSet<u32>> = None;
    for (_, s) in &all {
        let set: BTreeSet<u32> = s.iter().copied().collect();
        acc = Some(match acc {
            None => set,
            Some(prev) => prev.intersection(&set).copied().collect(),
        });
    }
    acc.unwrap_or_default()
}

/// Directed edges as render ids, by walking every storyline including its
/// dummy endpoints and dropping duplicates.
pub fn oracle_edges(bundle: &StoryBundle) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for s in &bundle.storylines {
        let mut walk = vec![format!("START_{}", s.start.0)];
        walk.extend(s.beats.iter().map(|b| format!("Beat_{}", b.0)));
        walk.push(format!("END_{}", s.end.0));
        for w in walk.windows(2) {
            out.insert((w[0].clone(), w[1].clone()));
        }
    }
    out
}

/// Node ids: every beat used by a storyline plus every dummy label.
pub fn oracle_nodes(bundle: &StoryBundle) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in &bundle.storylines {
        out.insert(format!("START_{}", s.start.0));
        out.insert(format!("END_{}", s.end.0));
        for b in &s.beats {
            out.insert(format!("Beat_{}", b.0));
        }
    }
    out
}

/// Pairs whose longest shared run exceeds `limit`, with that length.
pub fn oracle_run_violations(bundle: &StoryBundle, limit: usize) -> BTreeMap<(u32, u32), usize> {
    let all = seqs(bundle);
    let mut out = BTreeMap::new();
    for x in 0..all.len() {
        for y in x + 1..all.len() {
            let len = oracle_longest_run(&all[x].1, &all[y].1);
            if len > limit {
                let (i, j) = (all[x].0.min(all[y].0), all[x].0.max(all[y].0));
                out.insert((i, j), len);
            }
        }
    }
    out
}

/// Beat pairs with transitions in both directions.
pub fn oracle_two_way(bundle: &StoryBundle) -> BTreeSet<(u32, u32)> {
    let mut edges = BTreeSet::new();
    for (_, s) in seqs(bundle) {
        for w in s.windows(2) {
            edges.insert((w[0], w[1]));
        }
    }
    edges
        .iter()
        .filter(|(a, b)| a < b && edges.contains(&(*b, *a)))
        .copied()
        .collect()
}

/// Edge pairs listed in a hand-written `EDGES:` object: every pair from
/// every node's incoming and outgoing lists. Reads the text with plain JSON
/// only, independent of the library's payload reader.
pub fn edges_in_payload_text(text: &str) -> BTreeSet<(String, String)> {
    let at = text.find("EDGES:").expect("EDGES label") + "EDGES:".len();
    let obj: serde_json::Value = serde_json::from_str(text[at..].trim()).expect("EDGES json");
    let mut out = BTreeSet::new();
    for (_, per_state) in obj.as_object().unwrap() {
        for (_, lists) in per_state.as_object().unwrap() {
            for list in lists.as_array().unwrap() {
                for pair in list.as_array().unwrap() {
                    let p = pair.as_array().unwrap();
                    out.insert((
                        p[0].as_str().unwrap().to_string(),
                        p[1].as_str().unwrap().to_string(),
                    ));
                }
            }
        }
    }
    out
}

/// Keys of a hand-written `NODES:` object, in document order.
pub fn node_keys_in_payload_text(text: &str) -> Vec<String> {
    let start = text.find("NODES:").expect("NODES label") + "NODES:".len();
    let end = text.find("EDGES:").unwrap_or(text.len());
    let obj: serde_json::Value = serde_json::from_str(text[start..end].trim()).expect("NODES json");
    obj.as_object().unwrap().keys().cloned().collect()
}

/// Random closed bundles: up to 12 beats, 6 storylines, 2 starts, 3 ends.
pub fn arb_bundle() -> impl Strategy<Value = StoryBundle> {
    (1u32..=12, 1usize..=6)
        .prop_flat_map(|(n_beats, n_storylines)| {
            (
                vec("[A-Z][a-z]{1,6}( [a-z]{1,6}){0,3}\\.", n_beats as usize),
                vec((1u32..=2, vec(1..=n_beats, 1..=7), 1u32..=3), n_storylines),
                btree_set(1..=n_beats, 0..=3),
            )
        })
        .prop_map(|(descs, storylines, common)| {
            let beats: BTreeMap<BeatId, String> = descs
                .into_iter()
                .enumerate()
                .map(|(i, d)| (BeatId(i as u32 + 1), d))
                .collect();
            let storylines: Vec<Storyline> = storylines
                .into_iter()
                .enumerate()
                .map(|(i, (s, seq, e))| Storyline::new(i as u32 + 1, s, seq, e))
                .collect();
            let n = storylines.len() as u32;
            StoryBundle::from_parts(
                GenerationSpec::new("Story", "Setting", 1, 2, n),
                beats,
                storylines,
                common.into_iter().map(BeatId).collect(),
                String::new(),
            )
            .expect("generated bundles are closed")
        })
}

