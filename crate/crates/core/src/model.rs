//! Domain types shared by every stage of the pipeline.
//!
//! A [`StoryBundle`] is the parsed result of one generation round. Beats are
//! identified by their integer number; descriptions are attributes of that
//! number. Storylines reference beats by id and are bounded by dummy
//! `START_k` / `END_k` labels. [`merge_transitions`] folds every storyline
//! path into a single [`NarrativeGraph`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("storyline {storyline} references beat {beat}, which is not in the beat list")]
    DanglingBeatRef { storyline: u32, beat: BeatId },
    #[error("storyline {0} has no beats")]
    EmptyStoryline(u32),
    #[error("beat ids start at 1")]
    ZeroBeatId,
    #[error("beat {0} has a blank description")]
    BlankDescription(BeatId),
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
}

/// Beat number as assigned by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeatId(pub u32);

impl fmt::Display for BeatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for BeatId {
    fn from(v: u32) -> Self {
        BeatId(v)
    }
}

fn dummy_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(start|end)[\s_-]*(\d+)\s*$").unwrap())
}

/// Parses "START_1", "START 1", "Start_1" and friends into `(is_start, k)`.
fn parse_dummy(s: &str) -> Option<(bool, u32)> {
    let caps = dummy_label_re().captures(s)?;
    let k: u32 = caps[2].parse().ok()?;
    if k == 0 {
        return None;
    }
    Some((caps[1].eq_ignore_ascii_case("start"), k))
}

macro_rules! dummy_label {
    ($name:ident, $prefix:literal, $is_start:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "_{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match parse_dummy(s) {
                    Some(($is_start, k)) => Ok($name(k)),
                    _ => Err(ModelError::InvalidLabel(s.to_string())),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

dummy_label!(StartLabel, "START", true);
dummy_label!(EndLabel, "END", false);

/// A node of the merged graph.
///
/// The derived ordering is the canonical render order: beats ascending, then
/// starts, then ends. In JSON a beat is a bare number and dummies are their
/// label strings, so `[2, 18]` and `["START_1", 1]` are both valid pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Beat(BeatId),
    Start(StartLabel),
    End(EndLabel),
}

impl NodeRef {
    pub fn beat(id: u32) -> Self {
        NodeRef::Beat(BeatId(id))
    }

    pub fn as_beat(&self) -> Option<BeatId> {
        match self {
            NodeRef::Beat(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_dummy(&self) -> bool {
        !matches!(self, NodeRef::Beat(_))
    }

    /// Identifier used in render payloads: `Beat_<n>`, `START_<k>`, `END_<k>`.
    pub fn render_id(&self) -> String {
        self.to_string()
    }

    /// Inverse of [`NodeRef::render_id`]; also accepts `Beat 3` and dummy
    /// spelling variants.
    pub fn parse_render_id(s: &str) -> Option<Self> {
        let t = s.trim();
        if let Some((is_start, k)) = parse_dummy(t) {
            return Some(if is_start {
                NodeRef::Start(StartLabel(k))
            } else {
                NodeRef::End(EndLabel(k))
            });
        }
        let lower = t.to_ascii_lowercase();
        let rest = lower.strip_prefix("beat")?;
        let rest = rest.trim_start_matches(['_', ' ', '-']);
        let n: u32 = rest.parse().ok()?;
        (n > 0).then_some(NodeRef::beat(n))
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Beat(b) => write!(f, "Beat_{}", b.0),
            NodeRef::Start(s) => s.fmt(f),
            NodeRef::End(e) => e.fmt(f),
        }
    }
}

impl From<BeatId> for NodeRef {
    fn from(b: BeatId) -> Self {
        NodeRef::Beat(b)
    }
}

impl Serialize for NodeRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NodeRef::Beat(b) => s.serialize_u32(b.0),
            other => s.collect_str(other),
        }
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("beat ids start at 1")),
            Raw::Num(n) => Ok(NodeRef::beat(n)),
            Raw::Str(s) => NodeRef::parse_render_id(&s)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid node label {s:?}"))),
        }
    }
}

pub type Transition = (NodeRef, NodeRef);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beat {
    pub id: BeatId,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Storyline {
    pub index: u32,
    #[serde(rename = "start_label")]
    pub start: StartLabel,
    #[serde(rename = "beat_ids")]
    pub beats: Vec<BeatId>,
    #[serde(rename = "end_label")]
    pub end: EndLabel,
}

impl Storyline {
    pub fn new(index: u32, start: u32, beats: impl IntoIterator<Item = u32>, end: u32) -> Self {
        Storyline {
            index,
            start: StartLabel(start),
            beats: beats.into_iter().map(BeatId).collect(),
            end: EndLabel(end),
        }
    }

    pub fn first_beat(&self) -> Option<BeatId> {
        self.beats.first().copied()
    }

    pub fn last_beat(&self) -> Option<BeatId> {
        self.beats.last().copied()
    }

    /// True when `(from, to)` appear as adjacent beats in this storyline.
    pub fn has_transition(&self, from: BeatId, to: BeatId) -> bool {
        self.beats.windows(2).any(|w| w[0] == from && w[1] == to)
    }
}

/// Designer input for a generation round.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub story: String,
    pub setting: String,
    pub n_starts: u32,
    pub n_endings: u32,
    pub n_storylines: u32,
}

impl GenerationSpec {
    pub fn new(
        story: impl Into<String>,
        setting: impl Into<String>,
        n_starts: u32,
        n_endings: u32,
        n_storylines: u32,
    ) -> Self {
        GenerationSpec {
            story: story.into(),
            setting: setting.into(),
            n_starts,
            n_endings,
            n_storylines,
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.story.trim().is_empty() {
            return bad("story is blank");
        }
        if self.setting.trim().is_empty() {
            return bad("setting is blank");
        }
        if self.n_starts == 0 || self.n_endings == 0 || self.n_storylines == 0 {
            return bad("starts, endings and storylines must be positive");
        }
        if self.n_starts > self.n_storylines {
            return bad("more starts than storylines");
        }
        if self.n_endings > self.n_storylines {
            return bad("more endings than storylines");
        }
        Ok(())
    }
}

/// The parsed output of one generation (or edit) round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryBundle {
    pub spec: GenerationSpec,
    pub beats: BTreeMap<BeatId, String>,
    pub storylines: Vec<Storyline>,
    pub starts: BTreeMap<StartLabel, BeatId>,
    pub ends: BTreeMap<EndLabel, BeatId>,
    pub declared_common_beats: BTreeSet<BeatId>,
    pub raw_text: String,
}

impl StoryBundle {
    /// Assembles a bundle, deriving the start/end pointer maps from the
    /// storylines. When one label fronts several different beats the first
    /// storyline wins; the validator reports the conflict.
    pub fn from_parts(
        spec: GenerationSpec,
        beats: BTreeMap<BeatId, String>,
        storylines: Vec<Storyline>,
        declared_common_beats: BTreeSet<BeatId>,
        raw_text: String,
    ) -> Result<Self, ModelError> {
        for (id, desc) in &beats {
            if id.0 == 0 {
                return Err(ModelError::ZeroBeatId);
            }
            if desc.trim().is_empty() {
                return Err(ModelError::BlankDescription(*id));
            }
        }
        let mut starts = BTreeMap::new();
        let mut ends = BTreeMap::new();
        for s in &storylines {
            let (Some(first), Some(last)) = (s.first_beat(), s.last_beat()) else {
                return Err(ModelError::EmptyStoryline(s.index));
            };
            if let Some(b) = s.beats.iter().find(|b| !beats.contains_key(b)) {
                return Err(ModelError::DanglingBeatRef {
                    storyline: s.index,
                    beat: *b,
                });
            }
            starts.entry(s.start).or_insert(first);
            ends.entry(s.end).or_insert(last);
        }
        Ok(StoryBundle {
            spec,
            beats,
            storylines,
            starts,
            ends,
            declared_common_beats,
            raw_text,
        })
    }

    pub fn beat(&self, id: BeatId) -> Option<&str> {
        self.beats.get(&id).map(String::as_str)
    }

    pub fn max_beat_id(&self) -> Option<BeatId> {
        self.beats.keys().next_back().copied()
    }

    pub fn storyline(&self, index: u32) -> Option<&Storyline> {
        self.storylines.iter().find(|s| s.index == index)
    }

    /// Beats that occur in at least one storyline.
    pub fn used_beats(&self) -> BTreeSet<BeatId> {
        self.storylines
            .iter()
            .flat_map(|s| s.beats.iter().copied())
            .collect()
    }

    pub fn with_raw_text(mut self, raw_text: impl Into<String>) -> Self {
        self.raw_text = raw_text.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedNode {
    pub id: BeatId,
    pub description: String,
}

/// Designer edits driving a regeneration round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSet {
    #[serde(default)]
    pub nodes_added: Vec<AddedNode>,
    #[serde(default)]
    pub nodes_deleted: BTreeSet<BeatId>,
    #[serde(default)]
    pub edges_added: BTreeSet<(BeatId, BeatId)>,
    #[serde(default)]
    pub edges_deleted: BTreeSet<(BeatId, BeatId)>,
}

impl EditSet {
    pub fn is_empty(&self) -> bool {
        self.nodes_added.is_empty()
            && self.nodes_deleted.is_empty()
            && self.edges_added.is_empty()
            && self.edges_deleted.is_empty()
    }

    pub fn added_ids(&self) -> BTreeSet<BeatId> {
        self.nodes_added.iter().map(|n| n.id).collect()
    }
}

/// All storylines merged into one directed graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NarrativeGraph {
    pub beat_nodes: BTreeSet<BeatId>,
    pub start_nodes: BTreeSet<StartLabel>,
    pub end_nodes: BTreeSet<EndLabel>,
    pub edges: BTreeSet<Transition>,
}

impl NarrativeGraph {
    pub fn node_count(&self) -> usize {
        self.beat_nodes.len() + self.start_nodes.len() + self.end_nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.beat_nodes
            .iter()
            .map(|b| NodeRef::Beat(*b))
            .chain(self.start_nodes.iter().map(|s| NodeRef::Start(*s)))
            .chain(self.end_nodes.iter().map(|e| NodeRef::End(*e)))
    }

    pub fn successors(&self, node: NodeRef) -> impl Iterator<Item = NodeRef> + '_ {
        self.edges
            .range((node, NodeRef::Beat(BeatId(0)))..)
            .take_while(move |(u, _)| *u == node)
            .map(|(_, v)| *v)
    }

    pub fn predecessors(&self, node: NodeRef) -> impl Iterator<Item = NodeRef> + '_ {
        self.edges
            .iter()
            .filter(move |(_, v)| *v == node)
            .map(|(u, _)| *u)
    }

    /// Edges between two beats, dropping the dummy attachments.
    pub fn beat_edges(&self) -> impl Iterator<Item = (BeatId, BeatId)> + '_ {
        self.edges
            .iter()
            .filter_map(|(u, v)| Some((u.as_beat()?, v.as_beat()?)))
    }
}

/// The path of one storyline as edges, dummy attachments included.
pub fn storyline_transitions(s: &Storyline) -> Vec<Transition> {
    let mut path = Vec::with_capacity(s.beats.len() + 2);
    path.push(NodeRef::Start(s.start));
    path.extend(s.beats.iter().map(|b| NodeRef::Beat(*b)));
    path.push(NodeRef::End(s.end));
    path.windows(2).map(|w| (w[0], w[1])).collect()
}

pub fn merge_transitions(bundle: &StoryBundle) -> Result<NarrativeGraph, ModelError> {
    let mut g = NarrativeGraph::default();
    for s in &bundle.storylines {
        if let Some(b) = s.beats.iter().find(|b| !bundle.beats.contains_key(b)) {
            return Err(ModelError::DanglingBeatRef {
                storyline: s.index,
                beat: *b,
            });
        }
        g.start_nodes.insert(s.start);
        g.end_nodes.insert(s.end);
        g.beat_nodes.extend(s.beats.iter().copied());
        g.edges.extend(storyline_transitions(s));
    }
    Ok(g)
}

/// Canonical form used when comparing descriptions: whitespace runs
/// collapsed, ends trimmed, trailing periods dropped.
pub fn normalize_description(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim_end().to_string()
}

/// Whitespace-collapsed description as stored in a bundle.
pub fn tidy_description(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
