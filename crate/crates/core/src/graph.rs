//! Render payloads: the `NODES` / `EDGES` objects consumed by the browser
//! client.
//!
//! [`build_render_payload`] is the deterministic source of truth. Payloads
//! produced by a model are read with [`parse_render_payload`] and diffed
//! against it with [`reconcile`].
//!
//! Wire shape of one node and one edge entry:
//!
//! ```text
//! "Beat_3": [["None", 3, "She encounters ...", "1"]]
//! "Beat_3": {"None": [[["Beat_1", "Beat_3"]], [["Beat_3", "Beat_5"]]]}
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{merge_transitions, normalize_description, ModelError, NodeRef, StoryBundle, Transition};

pub const DEFAULT_GAME_STATE: &str = "None";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderNode {
    pub game_state: Option<String>,
    pub nr_beat: Option<u32>,
    pub beat: Option<String>,
    pub pathway: Option<String>,
}

impl RenderNode {
    pub fn dummy() -> Self {
        RenderNode {
            game_state: Some(DEFAULT_GAME_STATE.to_string()),
            nr_beat: None,
            beat: None,
            pathway: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEdges {
    /// Key of the wrapping object; always "None" in generated payloads.
    pub game_state: String,
    pub incoming: Vec<Transition>,
    pub outgoing: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RenderPayload {
    pub nodes: IndexMap<NodeRef, RenderNode>,
    pub edges: IndexMap<NodeRef, NodeEdges>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("PAYLOAD-MALFORMED: {0}")]
    Malformed(String),
    #[error("PAYLOAD-ASYMMETRIC-EDGE: ({from}, {to}) is listed as {listed} of {at} only")]
    AsymmetricEdge {
        from: String,
        to: String,
        listed: &'static str,
        at: String,
    },
    #[error("PAYLOAD-KEYSET-MISMATCH: only in NODES {only_in_nodes:?}, only in EDGES {only_in_edges:?}")]
    KeysetMismatch {
        only_in_nodes: Vec<String>,
        only_in_edges: Vec<String>,
    },
}

impl PayloadError {
    pub fn code(&self) -> &'static str {
        match self {
            PayloadError::Malformed(_) => "PAYLOAD-MALFORMED",
            PayloadError::AsymmetricEdge { .. } => "PAYLOAD-ASYMMETRIC-EDGE",
            PayloadError::KeysetMismatch { .. } => "PAYLOAD-KEYSET-MISMATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadWarning {
    pub code: String,
    pub message: String,
}

pub const DUMMY_ORDER: &str = "PAYLOAD-DUMMY-ORDER";

impl RenderPayload {
    pub fn edge_set(&self) -> BTreeSet<Transition> {
        self.edges
            .values()
            .flat_map(|e| e.incoming.iter().chain(e.outgoing.iter()).copied())
            .collect()
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.keys().map(NodeRef::render_id).collect()
    }

    pub fn to_value(&self) -> Value {
        let nodes: Map<String, Value> = self
            .nodes
            .iter()
            .map(|(k, n)| (k.render_id(), node_value(n)))
            .collect();
        let edges: Map<String, Value> = self
            .edges
            .iter()
            .map(|(k, e)| (k.render_id(), edges_value(e)))
            .collect();
        json!({ "NODES": nodes, "EDGES": edges })
    }

    /// The exact file format handed to the browser: one entry per line,
    /// values in compact JSON.
    pub fn to_json_text(&self) -> String {
        let mut out = String::from("{\n  \"NODES\": {\n");
        write_entries(&mut out, self.nodes.iter().map(|(k, n)| (k, node_value(n))));
        out.push_str("  },\n  \"EDGES\": {\n");
        write_entries(&mut out, self.edges.iter().map(|(k, e)| (k, edges_value(e))));
        out.push_str("  }\n}\n");
        out
    }

    pub fn from_value(value: &Value) -> Result<(Self, Vec<PayloadWarning>), PayloadError> {
        let obj = value
            .as_object()
            .ok_or_else(|| PayloadError::Malformed("payload is not a JSON object".into()))?;
        let nodes = get_ci(obj, "NODES")
            .ok_or_else(|| PayloadError::Malformed("no NODES object".into()))?;
        let edges = get_ci(obj, "EDGES")
            .ok_or_else(|| PayloadError::Malformed("no EDGES object".into()))?;
        from_objects(nodes, edges)
    }

    /// Beat nodes that are not on any START → END path.
    pub fn disconnected_beats(&self) -> BTreeSet<NodeRef> {
        let edges = self.edge_set();
        let forward = reach(&edges, self.nodes.keys().filter(|n| matches!(n, NodeRef::Start(_))), false);
        let backward = reach(&edges, self.nodes.keys().filter(|n| matches!(n, NodeRef::End(_))), true);
        self.nodes
            .keys()
            .filter(|n| !n.is_dummy() && !(forward.contains(n) && backward.contains(n)))
            .copied()
            .collect()
    }

    /// Checks key-set equality and incoming/outgoing symmetry.
    pub fn check_invariants(&self) -> Result<(), PayloadError> {
        let only_in_nodes: Vec<String> = self
            .nodes
            .keys()
            .filter(|k| !self.edges.contains_key(*k))
            .map(NodeRef::render_id)
            .collect();
        let only_in_edges: Vec<String> = self
            .edges
            .keys()
            .filter(|k| !self.nodes.contains_key(*k))
            .map(NodeRef::render_id)
            .collect();
        if !only_in_nodes.is_empty() || !only_in_edges.is_empty() {
            return Err(PayloadError::KeysetMismatch {
                only_in_nodes,
                only_in_edges,
            });
        }
        for (node, e) in &self.edges {
            for (u, v) in &e.outgoing {
                if u != node {
                    return Err(PayloadError::Malformed(format!(
                        "outgoing edge ({u}, {v}) listed under {node}"
                    )));
                }
                if !self.edges.get(v).is_some_and(|x| x.incoming.contains(&(*u, *v))) {
                    return Err(asym(u, v, "outgoing", node));
                }
            }
            for (u, v) in &e.incoming {
                if v != node {
                    return Err(PayloadError::Malformed(format!(
                        "incoming edge ({u}, {v}) listed under {node}"
                    )));
                }
                if !self.edges.get(u).is_some_and(|x| x.outgoing.contains(&(*u, *v))) {
                    return Err(asym(u, v, "incoming", node));
                }
            }
        }
        Ok(())
    }
}

fn asym(u: &NodeRef, v: &NodeRef, listed: &'static str, at: &NodeRef) -> PayloadError {
    PayloadError::AsymmetricEdge {
        from: u.render_id(),
        to: v.render_id(),
        listed,
        at: at.render_id(),
    }
}

fn reach<'a>(
    edges: &BTreeSet<Transition>,
    seeds: impl Iterator<Item = &'a NodeRef>,
    reverse: bool,
) -> BTreeSet<NodeRef> {
    let mut adj: BTreeMap<NodeRef, Vec<NodeRef>> = BTreeMap::new();
    for (u, v) in edges {
        let (a, b) = if reverse { (v, u) } else { (u, v) };
        adj.entry(*a).or_default().push(*b);
    }
    let mut seen: BTreeSet<NodeRef> = seeds.copied().collect();
    let mut queue: VecDeque<NodeRef> = seen.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        for m in adj.get(&n).into_iter().flatten() {
            if seen.insert(*m) {
                queue.push_back(*m);
            }
        }
    }
    seen
}

fn write_entries<'a>(out: &mut String, entries: impl Iterator<Item = (&'a NodeRef, Value)>) {
    let entries: Vec<_> = entries.collect();
    let n = entries.len();
    for (i, (k, v)) in entries.into_iter().enumerate() {
        let sep = if i + 1 < n { "," } else { "" };
        let _ = writeln!(
            out,
            "    {}: {}{}",
            Value::String(k.render_id()),
            v,
            sep
        );
    }
}

fn node_value(n: &RenderNode) -> Value {
    json!([[n.game_state, n.nr_beat, n.beat, n.pathway]])
}

fn pair_value(t: &Transition) -> Value {
    json!([t.0.render_id(), t.1.render_id()])
}

fn edges_value(e: &NodeEdges) -> Value {
    let inc: Vec<Value> = e.incoming.iter().map(pair_value).collect();
    let out: Vec<Value> = e.outgoing.iter().map(pair_value).collect();
    let mut m = Map::new();
    m.insert(e.game_state.clone(), json!([inc, out]));
    Value::Object(m)
}

impl Serialize for RenderPayload {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RenderPayload {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        RenderPayload::from_value(&v)
            .map(|(p, _)| p)
            .map_err(serde::de::Error::custom)
    }
}

/// Deterministic payload for a bundle: one node per beat used by a
/// storyline plus the dummies, edges from the merged storyline paths.
pub fn build_render_payload(bundle: &StoryBundle) -> Result<RenderPayload, ModelError> {
    let graph = merge_transitions(bundle)?;
    let mut pathway: BTreeMap<NodeRef, u32> = BTreeMap::new();
    for s in &bundle.storylines {
        for b in &s.beats {
            let e = pathway.entry(NodeRef::Beat(*b)).or_insert(s.index);
            *e = (*e).min(s.index);
        }
    }

    let mut incoming: BTreeMap<NodeRef, Vec<Transition>> = BTreeMap::new();
    let mut outgoing: BTreeMap<NodeRef, Vec<Transition>> = BTreeMap::new();
    // edges iterate in (from, to) order, so both lists come out sorted
    for t in &graph.edges {
        outgoing.entry(t.0).or_default().push(*t);
    }
    let mut by_target: Vec<Transition> = graph.edges.iter().copied().collect();
    by_target.sort_by_key(|(u, v)| (*v, *u));
    for t in by_target {
        incoming.entry(t.1).or_default().push(t);
    }

    let mut payload = RenderPayload::default();
    for node in graph.nodes() {
        let rn = match node {
            NodeRef::Beat(b) => RenderNode {
                game_state: Some(DEFAULT_GAME_STATE.to_string()),
                nr_beat: Some(b.0),
                beat: bundle.beat(b).map(str::to_string),
                pathway: pathway.get(&node).map(|p| p.to_string()),
            },
            _ => RenderNode::dummy(),
        };
        payload.nodes.insert(node, rn);
        payload.edges.insert(
            node,
            NodeEdges {
                game_state: DEFAULT_GAME_STATE.to_string(),
                incoming: incoming.remove(&node).unwrap_or_default(),
                outgoing: outgoing.remove(&node).unwrap_or_default(),
            },
        );
    }
    Ok(payload)
}

fn get_ci<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key)
        .or_else(|| obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v))
}

/// Removes commas that directly precede `}` or `]`, outside strings.
fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        if c == '"' {
            in_str = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// Byte range of the balanced `{...}` starting at `open`.
fn balanced_object(s: &str, open: usize) -> Option<&str> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[open..].char_indices() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&s[open..open + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn labelled_object<'a>(text: &'a str, label: &str, from: usize) -> Option<(&'a str, usize)> {
    static RES: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (nodes_re, edges_re) = RES.get_or_init(|| {
        (
            Regex::new(r#"(?i)"?\bNODES\b"?\s*[:=]?\s*\{"#).unwrap(),
            Regex::new(r#"(?i)"?\bEDGES\b"?\s*[:=]?\s*\{"#).unwrap(),
        )
    });
    let re = if label == "NODES" { nodes_re } else { edges_re };
    let m = re.find_at(text, from)?;
    let open = m.end() - 1;
    let obj = balanced_object(text, open)?;
    Some((obj, open + obj.len()))
}

/// Reads a model-written payload: either one JSON object with `NODES` and
/// `EDGES` members, or two labelled objects (`NODES: {...} EDGES: {...}`).
/// Trailing commas and code fences are tolerated.
pub fn parse_render_payload(text: &str) -> Result<(RenderPayload, Vec<PayloadWarning>), PayloadError> {
    let cleaned = strip_trailing_commas(text);
    let unfenced: String = cleaned
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    if let Ok(v) = serde_json::from_str::<Value>(unfenced.trim()) {
        if v.as_object()
            .is_some_and(|o| get_ci(o, "NODES").is_some() && get_ci(o, "EDGES").is_some())
        {
            return RenderPayload::from_value(&v);
        }
    }
    let (nodes_src, after) = labelled_object(&unfenced, "NODES", 0)
        .ok_or_else(|| PayloadError::Malformed("no NODES object found".into()))?;
    let (edges_src, _) = labelled_object(&unfenced, "EDGES", after)
        .ok_or_else(|| PayloadError::Malformed("no EDGES object found after NODES".into()))?;
    let nodes: Value = serde_json::from_str(nodes_src)
        .map_err(|e| PayloadError::Malformed(format!("NODES is not valid JSON: {e}")))?;
    let edges: Value = serde_json::from_str(edges_src)
        .map_err(|e| PayloadError::Malformed(format!("EDGES is not valid JSON: {e}")))?;
    from_objects(&nodes, &edges)
}

fn node_key(k: &str) -> Result<NodeRef, PayloadError> {
    NodeRef::parse_render_id(k).ok_or_else(|| PayloadError::Malformed(format!("bad node id {k:?}")))
}

fn opt_string(v: &Value, what: &str, node: &str) -> Result<Option<String>, PayloadError> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        _ => Err(PayloadError::Malformed(format!("{node}: {what} must be a string or null"))),
    }
}

fn parse_node(key: &str, id: NodeRef, v: &Value) -> Result<RenderNode, PayloadError> {
    let bad = |m: &str| PayloadError::Malformed(format!("{key}: {m}"));
    let arr = v.as_array().ok_or_else(|| bad("node value must be an array"))?;
    let fields = match arr.first() {
        Some(Value::Array(inner)) => inner,
        _ => arr,
    };
    if fields.len() != 4 {
        return Err(bad("expected [game_state, nr_beat, beat, pathway]"));
    }
    let nr_beat = match &fields[1] {
        Value::Null => None,
        Value::Number(n) => Some(
            n.as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| bad("nr_beat out of range"))?,
        ),
        Value::String(s) => Some(s.trim().parse().map_err(|_| bad("nr_beat is not a number"))?),
        _ => return Err(bad("nr_beat must be an integer or null")),
    };
    if let NodeRef::Beat(b) = id {
        if nr_beat != Some(b.0) {
            return Err(bad("nr_beat does not match the node id"));
        }
    }
    Ok(RenderNode {
        game_state: opt_string(&fields[0], "game_state", key)?,
        nr_beat,
        beat: opt_string(&fields[2], "beat", key)?,
        pathway: opt_string(&fields[3], "pathway", key)?,
    })
}

fn parse_pairs(v: &Value, key: &str) -> Result<Vec<Transition>, PayloadError> {
    let bad = || PayloadError::Malformed(format!("{key}: edge lists must hold [from, to] pairs"));
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|p| {
            let pair = p.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
            let end = |x: &Value| x.as_str().ok_or_else(bad).and_then(node_key);
            Ok((end(&pair[0])?, end(&pair[1])?))
        })
        .collect()
}

fn parse_edges(key: &str, v: &Value) -> Result<NodeEdges, PayloadError> {
    let bad = |m: &str| PayloadError::Malformed(format!("{key}: {m}"));
    let (state, lists) = match v {
        Value::Object(m) if m.len() == 1 => {
            let (k, v) = m.iter().next().unwrap();
            (k.clone(), v)
        }
        Value::Array(_) => (DEFAULT_GAME_STATE.to_string(), v),
        _ => return Err(bad("edge value must be {state: [[incoming], [outgoing]]}")),
    };
    let lists = lists
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| bad("expected [incoming, outgoing]"))?;
    Ok(NodeEdges {
        game_state: state,
        incoming: parse_pairs(&lists[0], key)?,
        outgoing: parse_pairs(&lists[1], key)?,
    })
}

fn move_dummies_last<V>(map: IndexMap<NodeRef, V>) -> (IndexMap<NodeRef, V>, bool) {
    let out_of_order = map
        .keys()
        .skip_while(|k| !k.is_dummy())
        .any(|k| !k.is_dummy());
    if !out_of_order {
        return (map, false);
    }
    let (beats, dummies): (Vec<_>, Vec<_>) = map.into_iter().partition(|(k, _)| !k.is_dummy());
    (beats.into_iter().chain(dummies).collect(), true)
}

fn from_objects(nodes: &Value, edges: &Value) -> Result<(RenderPayload, Vec<PayloadWarning>), PayloadError> {
    let nodes = nodes
        .as_object()
        .ok_or_else(|| PayloadError::Malformed("NODES must be an object".into()))?;
    let edges = edges
        .as_object()
        .ok_or_else(|| PayloadError::Malformed("EDGES must be an object".into()))?;
    let mut payload = RenderPayload::default();
    for (k, v) in nodes {
        let id = node_key(k)?;
        if payload.nodes.insert(id, parse_node(k, id, v)?).is_some() {
            return Err(PayloadError::Malformed(format!("node {id} listed twice")));
        }
    }
    for (k, v) in edges {
        let id = node_key(k)?;
        if payload.edges.insert(id, parse_edges(k, v)?).is_some() {
            return Err(PayloadError::Malformed(format!("edges for {id} listed twice")));
        }
    }
    payload.check_invariants()?;

    let mut warnings = Vec::new();
    let (n, moved_n) = move_dummies_last(std::mem::take(&mut payload.nodes));
    let (e, moved_e) = move_dummies_last(std::mem::take(&mut payload.edges));
    payload.nodes = n;
    payload.edges = e;
    if moved_n || moved_e {
        warnings.push(PayloadWarning {
            code: DUMMY_ORDER.into(),
            message: "START/END entries were not last; moved to the end".into(),
        });
    }
    Ok((payload, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionMismatch {
    pub node: NodeRef,
    pub oracle: String,
    pub candidate: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileReport {
    pub missing_edges: BTreeSet<Transition>,
    pub extra_edges: BTreeSet<Transition>,
    pub missing_nodes: BTreeSet<NodeRef>,
    pub extra_nodes: BTreeSet<NodeRef>,
    pub description_mismatches: Vec<DescriptionMismatch>,
}

impl ReconcileReport {
    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    pub fn size(&self) -> usize {
        self.missing_edges.len()
            + self.extra_edges.len()
            + self.missing_nodes.len()
            + self.extra_nodes.len()
            + self.description_mismatches.len()
    }
}

/// Diffs `candidate` against the deterministic payload for `bundle` and
/// returns the repaired payload: oracle structure, keeping the candidate's
/// wording for beats it numbered correctly.
pub fn reconcile(
    candidate: &RenderPayload,
    bundle: &StoryBundle,
) -> Result<(ReconcileReport, RenderPayload), ModelError> {
    let oracle = build_render_payload(bundle)?;
    let oracle_edges = oracle.edge_set();
    let cand_edges = candidate.edge_set();
    let oracle_nodes: BTreeSet<NodeRef> = oracle.nodes.keys().copied().collect();
    let cand_nodes: BTreeSet<NodeRef> = candidate.nodes.keys().copied().collect();

    let mut report = ReconcileReport {
        missing_edges: oracle_edges.difference(&cand_edges).copied().collect(),
        extra_edges: cand_edges.difference(&oracle_edges).copied().collect(),
        missing_nodes: oracle_nodes.difference(&cand_nodes).copied().collect(),
        extra_nodes: cand_nodes.difference(&oracle_nodes).copied().collect(),
        description_mismatches: Vec::new(),
    };

    let mut repaired = oracle.clone();
    for (id, node) in repaired.nodes.iter_mut() {
        if id.is_dummy() {
            continue;
        }
        let Some(cand) = candidate.nodes.get(id) else {
            continue;
        };
        let oracle_text = node.beat.clone().unwrap_or_default();
        let cand_text = cand.beat.clone().unwrap_or_default();
        if normalize_description(&oracle_text) != normalize_description(&cand_text) {
            report.description_mismatches.push(DescriptionMismatch {
                node: *id,
                oracle: oracle_text,
                candidate: cand_text,
            });
        }
        if cand.nr_beat == node.nr_beat && cand.beat.is_some() {
            node.beat = cand.beat.clone();
        }
    }
    Ok((report, repaired))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GenerationSpec, Storyline};

    fn small_bundle() -> StoryBundle {
        StoryBundle::from_parts(
            GenerationSpec::new("s", "t", 1, 1, 1),
            [(1, "First."), (2, "Second.")]
                .into_iter()
                .map(|(k, v)| (k.into(), v.to_string()))
                .collect(),
            vec![Storyline::new(1, 1, [1, 2], 1)],
            Default::default(),
            String::new(),
        )
        .unwrap()
    }

    #[test]
    fn minimal_payload_layout() {
        let p = build_render_payload(&small_bundle()).unwrap();
        assert_eq!(p.node_ids(), ["Beat_1", "Beat_2", "START_1", "END_1"]);
        assert_eq!(p.nodes[&NodeRef::beat(1)].pathway.as_deref(), Some("1"));
        assert_eq!(p.nodes[&NodeRef::Start(crate::StartLabel(1))], RenderNode::dummy());
        let text = p.to_json_text();
        assert!(text.contains(r#""START_1": [["None",null,null,null]],"#), "{text}");
        assert!(text.contains(r#""Beat_1": {"None":[[["START_1","Beat_1"]],[["Beat_1","Beat_2"]]]},"#), "{text}");
        let (back, warnings) = parse_render_payload(&text).unwrap();
        assert_eq!(back, p);
        assert!(warnings.is_empty());
        assert!(p.disconnected_beats().is_empty());
    }

    #[test]
    fn asymmetric_edge_is_rejected() {
        let mut p = build_render_payload(&small_bundle()).unwrap();
        p.edges[&NodeRef::beat(2)].incoming.clear();
        let err = parse_render_payload(&p.to_json_text()).unwrap_err();
        assert_eq!(err.code(), "PAYLOAD-ASYMMETRIC-EDGE");
    }

    #[test]
    fn keyset_mismatch_names_node() {
        let mut p = build_render_payload(&small_bundle()).unwrap();
        p.edges.shift_remove(&NodeRef::beat(2));
        p.edges[&NodeRef::beat(1)].outgoing.clear();
        p.edges[&crate::NodeRef::End(crate::EndLabel(1))].incoming.clear();
        match parse_render_payload(&p.to_json_text()).unwrap_err() {
            PayloadError::KeysetMismatch { only_in_nodes, only_in_edges } => {
                assert_eq!(only_in_nodes, ["Beat_2"]);
                assert!(only_in_edges.is_empty());
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn dummies_first_are_moved_with_warning() {
        let text = r#"NODES: {"START_1": [["None", null, null, null]], "Beat_1": [["None", 1, "x", "1"]], "END_1": [["None", null, null, null]]}
EDGES: {"START_1": {"None": [[], [["START_1", "Beat_1"]]]}, "Beat_1": {"None": [[["START_1", "Beat_1"]], [["Beat_1", "END_1"]]]}, "END_1": {"None": [[["Beat_1", "END_1"]], []]},}"#;
        let (p, w) = parse_render_payload(text).unwrap();
        assert_eq!(p.node_ids(), ["Beat_1", "START_1", "END_1"]);
        assert_eq!(w[0].code, DUMMY_ORDER);
    }

    #[test]
    fn garbage_is_malformed() {
        assert_eq!(parse_render_payload("no graph here").unwrap_err().code(), "PAYLOAD-MALFORMED");
        assert_eq!(
            parse_render_payload("NODES: {\"Beat_1\": 3} EDGES: {}").unwrap_err().code(),
            "PAYLOAD-MALFORMED"
        );
    }

    #[test]
    fn reconcile_identity_and_missing_node() {
        let b = small_bundle();
        let oracle = build_render_payload(&b).unwrap();
        let (r, repaired) = reconcile(&oracle, &b).unwrap();
        assert!(r.is_empty());
        assert_eq!(repaired, oracle);

        let mut cand = oracle.clone();
        cand.nodes.shift_remove(&NodeRef::beat(2));
        cand.edges.shift_remove(&NodeRef::beat(2));
        cand.edges[&NodeRef::beat(1)].outgoing.clear();
        cand.edges[&NodeRef::End(crate::EndLabel(1))].incoming.clear();
        let (r, repaired) = reconcile(&cand, &b).unwrap();
        assert_eq!(r.missing_nodes, [NodeRef::beat(2)].into());
        assert_eq!(r.missing_edges.len(), 2);
        assert_eq!(repaired, oracle);
    }
}
