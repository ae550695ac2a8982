//! Structural constraint checks over a parsed [`StoryBundle`].
//!
//! Every check always runs; its severity decides whether the bundle is
//! rejected. Pairwise checks compare beat sequences only, never the dummy
//! start/end labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

use crate::model::{merge_transitions, BeatId, StoryBundle, Storyline};
use crate::Severity;

/// Longest allowed contiguous beat run shared by two storylines.
pub const MAX_COMMON_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    #[serde(rename = "V-COUNT-STORYLINES")]
    CountStorylines,
    #[serde(rename = "V-STARTS")]
    Starts,
    #[serde(rename = "V-ENDS")]
    Ends,
    #[serde(rename = "V-BEAT-BUDGET")]
    BeatBudget,
    #[serde(rename = "V-RUN-LENGTH")]
    RunLength,
    #[serde(rename = "V-COMMON-COUNT")]
    CommonCount,
    #[serde(rename = "V-COMMON-CONSECUTIVE")]
    CommonConsecutive,
    #[serde(rename = "V-COMMON-DECLARED-MISMATCH")]
    CommonDeclaredMismatch,
    #[serde(rename = "V-SIMPLE-PATH")]
    SimplePath,
    #[serde(rename = "V-DUPLICATE-STORYLINE")]
    DuplicateStoryline,
    #[serde(rename = "V-CYCLE")]
    Cycle,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 11] = [
        ViolationCode::CountStorylines,
        ViolationCode::Starts,
        ViolationCode::Ends,
        ViolationCode::BeatBudget,
        ViolationCode::RunLength,
        ViolationCode::CommonCount,
        ViolationCode::CommonConsecutive,
        ViolationCode::CommonDeclaredMismatch,
        ViolationCode::SimplePath,
        ViolationCode::DuplicateStoryline,
        ViolationCode::Cycle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::CountStorylines => "V-COUNT-STORYLINES",
            ViolationCode::Starts => "V-STARTS",
            ViolationCode::Ends => "V-ENDS",
            ViolationCode::BeatBudget => "V-BEAT-BUDGET",
            ViolationCode::RunLength => "V-RUN-LENGTH",
            ViolationCode::CommonCount => "V-COMMON-COUNT",
            ViolationCode::CommonConsecutive => "V-COMMON-CONSECUTIVE",
            ViolationCode::CommonDeclaredMismatch => "V-COMMON-DECLARED-MISMATCH",
            ViolationCode::SimplePath => "V-SIMPLE-PATH",
            ViolationCode::DuplicateStoryline => "V-DUPLICATE-STORYLINE",
            ViolationCode::Cycle => "V-CYCLE",
        }
    }

    pub fn default_severity(&self) -> Severity {
        match self {
            ViolationCode::CommonCount
            | ViolationCode::CommonConsecutive
            | ViolationCode::CommonDeclaredMismatch
            | ViolationCode::Cycle => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subjects {
    pub storylines: Vec<u32>,
    pub beats: Vec<BeatId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub subjects: Subjects,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub unique_beats: usize,
    pub max_pairwise_run: usize,
    pub computed_common_beats: BTreeSet<BeatId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub stats: Stats,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn codes(&self) -> BTreeSet<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    pub fn find(&self, code: ViolationCode) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.code == code)
    }
}

/// How requested counts compare with what the bundle contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountRule {
    #[default]
    Exact,
    /// Requested counts are lower bounds; used after designer edits, which
    /// may legitimately grow the graph.
    AtLeast,
}

#[derive(Debug, Clone)]
pub struct ValidatorConfig {
    pub severities: BTreeMap<ViolationCode, Severity>,
    pub max_common_run: usize,
    pub count_rule: CountRule,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            severities: ViolationCode::ALL
                .iter()
                .map(|c| (*c, c.default_severity()))
                .collect(),
            max_common_run: MAX_COMMON_RUN,
            count_rule: CountRule::Exact,
        }
    }
}

impl ValidatorConfig {
    pub fn for_edits() -> Self {
        ValidatorConfig {
            count_rule: CountRule::AtLeast,
            ..Default::default()
        }
    }

    pub fn with_severity(mut self, code: ViolationCode, severity: Severity) -> Self {
        self.severities.insert(code, severity);
        self
    }

    fn severity(&self, code: ViolationCode) -> Severity {
        self.severities
            .get(&code)
            .copied()
            .unwrap_or_else(|| code.default_severity())
    }
}

/// Length and one witness location of the longest shared contiguous run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommonRun {
    pub len: usize,
    pub pos_a: usize,
    pub pos_b: usize,
}

/// Longest common contiguous subsequence of two beat sequences.
///
/// Ties resolve to the earliest start in `a`, then in `b`. Zero-length runs
/// report position `(0, 0)`.
pub fn longest_common_run(a: &[BeatId], b: &[BeatId]) -> CommonRun {
    let mut best = CommonRun::default();
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            let len = cur[j + 1];
            // runs of equal length ending later also start later, so strict > keeps the earliest
            if len > best.len {
                best = CommonRun {
                    len,
                    pos_a: i + 1 - len,
                    pos_b: j + 1 - len,
                };
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Beats present in every storyline.
pub fn computed_common_beats(bundle: &StoryBundle) -> BTreeSet<BeatId> {
    let mut iter = bundle.storylines.iter();
    let Some(first) = iter.next() else {
        return BTreeSet::new();
    };
    let mut common: BTreeSet<BeatId> = first.beats.iter().copied().collect();
    for s in iter {
        let set: BTreeSet<BeatId> = s.beats.iter().copied().collect();
        common.retain(|b| set.contains(b));
    }
    common
}

pub fn validate(bundle: &StoryBundle) -> ValidationReport {
    validate_with(bundle, &ValidatorConfig::default())
}

struct Sink<'a> {
    config: &'a ValidatorConfig,
    out: Vec<Violation>,
}

impl Sink<'_> {
    fn add(&mut self, code: ViolationCode, storylines: Vec<u32>, beats: Vec<BeatId>, detail: String) {
        self.out.push(Violation {
            code,
            severity: self.config.severity(code),
            subjects: Subjects { storylines, beats },
            detail,
        });
    }
}

fn count_ok(rule: CountRule, actual: usize, requested: u32) -> bool {
    match rule {
        CountRule::Exact => actual == requested as usize,
        CountRule::AtLeast => actual >= requested as usize,
    }
}

fn cycle_detail(g: &DiGraphMap<BeatId, ()>, c: &[BeatId]) -> String {
    let mut out = format!("beats {} form a directed cycle", ids(c));
    let two_way: Vec<String> = c
        .iter()
        .enumerate()
        .flat_map(|(i, a)| c[i + 1..].iter().map(move |b| (*a, *b)))
        .filter(|(a, b)| g.contains_edge(*a, *b) && g.contains_edge(*b, *a))
        .map(|(a, b)| format!("{a}<->{b}"))
        .collect();
    if !two_way.is_empty() {
        out.push_str(&format!(" (two-way transitions {})", two_way.join(", ")));
    }
    out
}

fn ids(v: &[BeatId]) -> String {
    v.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
}

pub fn validate_with(bundle: &StoryBundle, config: &ValidatorConfig) -> ValidationReport {
    let mut sink = Sink {
        config,
        out: Vec::new(),
    };
    let spec = &bundle.spec;
    let storylines = &bundle.storylines;
    let rule = config.count_rule;

    // V-COUNT-STORYLINES
    if !count_ok(rule, storylines.len(), spec.n_storylines) {
        sink.add(
            ViolationCode::CountStorylines,
            storylines.iter().map(|s| s.index).collect(),
            vec![],
            format!(
                "{} storylines, {} requested",
                storylines.len(),
                spec.n_storylines
            ),
        );
    }

    check_terminals(
        &mut sink,
        ViolationCode::Starts,
        "start",
        storylines,
        |s| s.start.0,
        |s| s.first_beat(),
        count_ok(rule, bundle.starts.len(), spec.n_starts),
        (bundle.starts.len(), spec.n_starts),
    );
    check_terminals(
        &mut sink,
        ViolationCode::Ends,
        "ending",
        storylines,
        |s| s.end.0,
        |s| s.last_beat(),
        count_ok(rule, bundle.ends.len(), spec.n_endings),
        (bundle.ends.len(), spec.n_endings),
    );

    // V-BEAT-BUDGET
    let used = bundle.used_beats();
    let budget_base = (spec.n_storylines as usize).max(storylines.len());
    if used.len() < 2 * budget_base {
        sink.add(
            ViolationCode::BeatBudget,
            vec![],
            vec![],
            format!(
                "{} unique beats, at least {} needed for {} storylines",
                used.len(),
                2 * budget_base,
                budget_base
            ),
        );
    }

    // V-RUN-LENGTH
    let mut ordered: Vec<&Storyline> = storylines.iter().collect();
    ordered.sort_by_key(|s| s.index);
    let mut max_run = 0;
    for (i, a) in ordered.iter().enumerate() {
        for b in &ordered[i + 1..] {
            let run = longest_common_run(&a.beats, &b.beats);
            max_run = max_run.max(run.len);
            if run.len > config.max_common_run {
                let shared = a.beats[run.pos_a..run.pos_a + run.len].to_vec();
                sink.add(
                    ViolationCode::RunLength,
                    vec![a.index, b.index],
                    shared.clone(),
                    format!(
                        "storylines {} and {} share the run {} (length {}, limit {})",
                        a.index,
                        b.index,
                        ids(&shared),
                        run.len,
                        config.max_common_run
                    ),
                );
            }
        }
    }

    // common beats
    let common = computed_common_beats(bundle);
    if !(2..=3).contains(&common.len()) {
        sink.add(
            ViolationCode::CommonCount,
            vec![],
            common.iter().copied().collect(),
            format!(
                "{} beat(s) common to all storylines, 2 or 3 expected",
                common.len()
            ),
        );
    }
    let mut adjacent: BTreeMap<(BeatId, BeatId), Vec<u32>> = BTreeMap::new();
    for s in &ordered {
        for w in s.beats.windows(2) {
            if common.contains(&w[0]) && common.contains(&w[1]) {
                let key = (w[0].min(w[1]), w[0].max(w[1]));
                let entry = adjacent.entry(key).or_default();
                if !entry.contains(&s.index) {
                    entry.push(s.index);
                }
            }
        }
    }
    for ((x, y), idx) in adjacent {
        sink.add(
            ViolationCode::CommonConsecutive,
            idx,
            vec![x, y],
            format!("common beats {x} and {y} are consecutive"),
        );
    }
    if bundle.declared_common_beats != common {
        let declared: Vec<BeatId> = bundle.declared_common_beats.iter().copied().collect();
        let computed: Vec<BeatId> = common.iter().copied().collect();
        let diff: Vec<BeatId> = bundle
            .declared_common_beats
            .symmetric_difference(&common)
            .copied()
            .collect();
        sink.add(
            ViolationCode::CommonDeclaredMismatch,
            vec![],
            diff,
            format!(
                "declared common beats {{{}}} but computed {{{}}}",
                ids(&declared),
                ids(&computed)
            ),
        );
    }

    // V-SIMPLE-PATH
    for s in &ordered {
        let mut seen = BTreeSet::new();
        let repeated: BTreeSet<BeatId> = s.beats.iter().filter(|b| !seen.insert(**b)).copied().collect();
        if !repeated.is_empty() {
            let rep: Vec<BeatId> = repeated.into_iter().collect();
            sink.add(
                ViolationCode::SimplePath,
                vec![s.index],
                rep.clone(),
                format!("storyline {} repeats beat(s) {}", s.index, ids(&rep)),
            );
        }
    }

    // V-DUPLICATE-STORYLINE
    for (i, a) in ordered.iter().enumerate() {
        for b in &ordered[i + 1..] {
            if a.beats == b.beats {
                sink.add(
                    ViolationCode::DuplicateStoryline,
                    vec![a.index, b.index],
                    a.beats.clone(),
                    format!("storylines {} and {} are identical", a.index, b.index),
                );
            }
        }
    }

    // V-CYCLE
    if let Ok(graph) = merge_transitions(bundle) {
        let mut g: DiGraphMap<BeatId, ()> = DiGraphMap::new();
        for b in &graph.beat_nodes {
            g.add_node(*b);
        }
        for (u, v) in graph.beat_edges() {
            g.add_edge(u, v, ());
        }
        let mut cycles: Vec<Vec<BeatId>> = tarjan_scc(&g)
            .into_iter()
            .filter(|c| c.len() > 1 || g.contains_edge(c[0], c[0]))
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        cycles.sort();
        for c in cycles {
            let involved: Vec<u32> = ordered
                .iter()
                .filter(|s| {
                    s.beats
                        .windows(2)
                        .any(|w| c.contains(&w[0]) && c.contains(&w[1]))
                })
                .map(|s| s.index)
                .collect();
            sink.add(
                ViolationCode::Cycle,
                involved,
                c.clone(),
                cycle_detail(&g, &c),
            );
        }
    }

    ValidationReport {
        violations: sink.out,
        stats: Stats {
            unique_beats: used.len(),
            max_pairwise_run: max_run,
            computed_common_beats: common,
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn check_terminals(
    sink: &mut Sink<'_>,
    code: ViolationCode,
    noun: &str,
    storylines: &[Storyline],
    label_of: impl Fn(&Storyline) -> u32,
    beat_of: impl Fn(&Storyline) -> Option<BeatId>,
    count_ok: bool,
    (actual, requested): (usize, u32),
) {
    if !count_ok {
        sink.add(
            code,
            vec![],
            vec![],
            format!("{actual} distinct {noun} labels, {requested} requested"),
        );
    }
    // label -> beats it is attached to, and beat -> labels attached to it
    let mut by_label: BTreeMap<u32, (BTreeSet<BeatId>, Vec<u32>)> = BTreeMap::new();
    for s in storylines {
        if let Some(b) = beat_of(s) {
            let e = by_label.entry(label_of(s)).or_default();
            e.0.insert(b);
            e.1.push(s.index);
        }
    }
    let mut by_beat: BTreeMap<BeatId, Vec<u32>> = BTreeMap::new();
    for (label, (beats, idx)) in &by_label {
        if beats.len() > 1 {
            sink.add(
                code,
                idx.clone(),
                beats.iter().copied().collect(),
                format!(
                    "{noun} {label} is attached to {} different beats",
                    beats.len()
                ),
            );
        }
        for b in beats {
            by_beat.entry(*b).or_default().push(*label);
        }
    }
    for (beat, labels) in by_beat {
        if labels.len() > 1 {
            let idx: Vec<u32> = by_label
                .iter()
                .filter(|(l, _)| labels.contains(l))
                .flat_map(|(_, (_, i))| i.iter().copied())
                .collect();
            sink.add(
                code,
                idx,
                vec![beat],
                format!(
                    "{} {noun} labels share beat {beat}; each must attach to a different beat",
                    labels.len()
                ),
            );
        }
    }
}
