//! Designer edits: regenerate storylines through the model, check that the
//! reply honours the edit set, and re-prompt with the problems otherwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::gateway::{GatewayError, Provider, Transcript};
use crate::model::{
    merge_transitions, normalize_description, BeatId, EditSet, ModelError, StoryBundle,
    Transition,
};
use crate::parser::{parse_storyline_document, ParseDiagnostic};
use crate::prompt::{check_edits, PromptError, TemplateSet};
use crate::validate::{validate_with, ValidationReport, ValidatorConfig};
use crate::Severity;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditCheck {
    /// Added beats present and used by a storyline.
    E1,
    /// Deleted beats absent from every storyline.
    E2,
    /// Added transitions adjacent in some storyline.
    E3,
    /// Deleted transitions adjacent in no storyline.
    E4,
    /// Untouched beats keep their descriptions.
    E5,
}

impl EditCheck {
    pub const ALL: [EditCheck; 5] = [
        EditCheck::E1,
        EditCheck::E2,
        EditCheck::E3,
        EditCheck::E4,
        EditCheck::E5,
    ];

    pub fn severity(&self) -> Severity {
        match self {
            EditCheck::E5 => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: EditCheck,
    pub severity: Severity,
    pub passed: bool,
    /// One line per offending beat or transition.
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditReport {
    pub checks: Vec<CheckResult>,
    /// `(number in the reply, number requested by the designer)` for added
    /// beats the model renumbered.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub renumbered: Vec<(BeatId, BeatId)>,
}

impl EditReport {
    pub fn passed(&self, check: EditCheck) -> bool {
        self.checks.iter().any(|c| c.check == check && c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn has_errors(&self) -> bool {
        self.failures().any(|c| c.severity == Severity::Error)
    }
}

/// Added beats are matched case-insensitively; models often re-case them.
fn match_key(s: &str) -> String {
    normalize_description(s).to_lowercase()
}

fn added_beat_location(new: &StoryBundle, id: BeatId, description: &str) -> Option<BeatId> {
    let want = match_key(description);
    new.beats
        .iter()
        .find(|(_, d)| match_key(d) == want)
        .map(|(b, _)| *b)
        .or_else(|| new.beats.contains_key(&id).then_some(id))
}

fn adjacent_in(new: &StoryBundle, u: BeatId, v: BeatId) -> Vec<u32> {
    new.storylines
        .iter()
        .filter(|s| s.has_transition(u, v))
        .map(|s| s.index)
        .collect()
}

fn list(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
}

/// Checks the edit post-conditions of `new` against `old`.
pub fn verify_edit(old: &StoryBundle, new: &StoryBundle, edits: &EditSet) -> EditReport {
    let used = new.used_beats();
    let mut problems: BTreeMap<EditCheck, Vec<String>> = BTreeMap::new();
    let mut flag = |c: EditCheck, p: String| problems.entry(c).or_default().push(p);

    for n in &edits.nodes_added {
        match added_beat_location(new, n.id, &n.description) {
            None => flag(EditCheck::E1, format!("added beat {} is missing", n.id)),
            Some(at) if !used.contains(&at) => flag(
                EditCheck::E1,
                format!("added beat {} is listed but no storyline passes through it", n.id),
            ),
            Some(_) => {}
        }
    }
    for id in &edits.nodes_deleted {
        let hits: Vec<u32> = new
            .storylines
            .iter()
            .filter(|s| s.beats.contains(id))
            .map(|s| s.index)
            .collect();
        if !hits.is_empty() {
            flag(
                EditCheck::E2,
                format!("deleted beat {id} still appears in storyline(s) {}", list(&hits)),
            );
        }
    }
    for (u, v) in &edits.edges_added {
        if adjacent_in(new, *u, *v).is_empty() {
            flag(
                EditCheck::E3,
                format!("no storyline goes directly from beat {u} to beat {v}"),
            );
        }
    }
    for (u, v) in &edits.edges_deleted {
        let hits = adjacent_in(new, *u, *v);
        if !hits.is_empty() {
            flag(
                EditCheck::E4,
                format!(
                    "deleted transition {u}->{v} still used by storyline(s) {}",
                    list(&hits)
                ),
            );
        }
    }
    let added = edits.added_ids();
    for (id, before) in &old.beats {
        if edits.nodes_deleted.contains(id) || added.contains(id) {
            continue;
        }
        if let Some(after) = new.beat(*id) {
            if normalize_description(before) != normalize_description(after) {
                flag(
                    EditCheck::E5,
                    format!("beat {id} changed description from {before:?} to {after:?}"),
                );
            }
        }
    }

    let checks = EditCheck::ALL
        .iter()
        .map(|c| {
            let p = problems.remove(c).unwrap_or_default();
            CheckResult {
                check: *c,
                severity: c.severity(),
                passed: p.is_empty(),
                problems: p,
            }
        })
        .collect();
    EditReport {
        checks,
        renumbered: Vec::new(),
    }
}

fn swap_ids(bundle: &mut StoryBundle, a: BeatId, b: BeatId) {
    let swap = |x: &mut BeatId| {
        if *x == a {
            *x = b;
        } else if *x == b {
            *x = a;
        }
    };
    let da = bundle.beats.remove(&a);
    let db = bundle.beats.remove(&b);
    if let Some(d) = da {
        bundle.beats.insert(b, d);
    }
    if let Some(d) = db {
        bundle.beats.insert(a, d);
    }
    for s in &mut bundle.storylines {
        s.beats.iter_mut().for_each(swap);
    }
    bundle.starts.values_mut().for_each(swap);
    bundle.ends.values_mut().for_each(swap);
    bundle.declared_common_beats = bundle
        .declared_common_beats
        .iter()
        .map(|x| {
            let mut x = *x;
            swap(&mut x);
            x
        })
        .collect();
}

/// Moves added beats the model renumbered back to the numbers the designer
/// asked for, locating them by description. Returns the applied moves.
pub fn align_added_ids(bundle: &mut StoryBundle, edits: &EditSet) -> Vec<(BeatId, BeatId)> {
    let mut moves = Vec::new();
    let mut added: Vec<_> = edits.nodes_added.iter().collect();
    added.sort_by_key(|n| n.id);
    for n in added {
        let want = match_key(&n.description);
        let found = bundle
            .beats
            .iter()
            .find(|(_, d)| match_key(d) == want)
            .map(|(b, _)| *b);
        if let Some(at) = found {
            if at != n.id {
                swap_ids(bundle, at, n.id);
                moves.push((at, n.id));
            }
        }
    }
    if !moves.is_empty() {
        debug!(?moves, "renumbered added beats");
    }
    moves
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDiff {
    pub beats_added: BTreeSet<BeatId>,
    pub beats_removed: BTreeSet<BeatId>,
    pub storylines_added: BTreeSet<u32>,
    pub storylines_removed: BTreeSet<u32>,
    pub storylines_changed: BTreeSet<u32>,
    pub edges_added: BTreeSet<Transition>,
    pub edges_removed: BTreeSet<Transition>,
}

impl BundleDiff {
    pub fn is_empty(&self) -> bool {
        self == &BundleDiff::default()
    }
}

pub fn diff_bundles(old: &StoryBundle, new: &StoryBundle) -> Result<BundleDiff, ModelError> {
    let keys = |b: &StoryBundle| b.beats.keys().copied().collect::<BTreeSet<_>>();
    let (ob, nb) = (keys(old), keys(new));
    let mut diff = BundleDiff {
        beats_added: &nb - &ob,
        beats_removed: &ob - &nb,
        ..Default::default()
    };
    for s in &new.storylines {
        match old.storyline(s.index) {
            None => {
                diff.storylines_added.insert(s.index);
            }
            Some(o) if o != s => {
                diff.storylines_changed.insert(s.index);
            }
            Some(_) => {}
        }
    }
    for s in &old.storylines {
        if new.storyline(s.index).is_none() {
            diff.storylines_removed.insert(s.index);
        }
    }
    let (oe, ne) = (merge_transitions(old)?.edges, merge_transitions(new)?.edges);
    diff.edges_added = &ne - &oe;
    diff.edges_removed = &oe - &ne;
    Ok(diff)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditOutcome {
    pub new_bundle: StoryBundle,
    pub edit_report: EditReport,
    pub validation: ValidationReport,
    pub attempts: u32,
    pub transcripts: Vec<Transcript>,
    pub diff: BundleDiff,
}

/// Why one attempt was rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptFailure {
    Parse { diagnostics: Vec<ParseDiagnostic> },
    Rejected {
        edit_report: EditReport,
        validation: ValidationReport,
    },
}

impl AttemptFailure {
    /// Corrective instructions for the next prompt.
    pub fn feedback(&self) -> Vec<String> {
        match self {
            AttemptFailure::Parse { diagnostics } => diagnostics
                .iter()
                .filter(|d| d.severity == Severity::Error)
                .map(|d| format!("{} (line {}): {}", d.code, d.line, d.message))
                .collect(),
            AttemptFailure::Rejected {
                edit_report,
                validation,
            } => {
                let mut out: Vec<String> = edit_report
                    .failures()
                    .filter(|c| c.severity == Severity::Error)
                    .flat_map(|c| c.problems.iter().map(move |p| format!("{:?}: {p}", c.check)))
                    .collect();
                out.extend(
                    validation
                        .errors()
                        .map(|v| format!("{}: {}", v.code, v.detail)),
                );
                out
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum EditError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("EDIT-EXHAUSTED: no acceptable reply after {attempts} attempt(s)")]
    Exhausted {
        attempts: u32,
        last: Box<AttemptFailure>,
        transcripts: Vec<Transcript>,
    },
}

impl EditError {
    pub fn code(&self) -> &'static str {
        match self {
            EditError::Prompt(e) => e.code(),
            EditError::Gateway(e) => e.code(),
            EditError::Exhausted { .. } => "EDIT-EXHAUSTED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditOptions {
    pub max_attempts: u32,
    pub templates: TemplateSet,
    pub validator: ValidatorConfig,
}

impl Default for EditOptions {
    fn default() -> Self {
        EditOptions {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            templates: TemplateSet::default(),
            validator: ValidatorConfig::for_edits(),
        }
    }
}

/// Runs the regenerate-verify loop for one edit set. Warnings never block
/// acceptance.
pub fn apply_edit(
    bundle: &StoryBundle,
    edits: &EditSet,
    provider: &dyn Provider,
    options: &EditOptions,
) -> Result<EditOutcome, EditError> {
    check_edits(bundle, edits)?;
    let mut feedback = Vec::new();
    let mut transcripts = Vec::new();
    let mut last = None;
    for attempt in 1..=options.max_attempts.max(1) {
        let prompt = options.templates.edit_prompt(bundle, edits, &feedback)?;
        let completion = provider.complete(&prompt)?;
        transcripts.push(completion.transcript);
        let parsed = parse_storyline_document(&completion.text, &bundle.spec);
        let failure = match parsed.into_result() {
            Err(diagnostics) => AttemptFailure::Parse { diagnostics },
            Ok(mut new) => {
                let renumbered = align_added_ids(&mut new, edits);
                let mut edit_report = verify_edit(bundle, &new, edits);
                edit_report.renumbered = renumbered;
                let validation = validate_with(&new, &options.validator);
                if !edit_report.has_errors() && !validation.has_errors() {
                    info!(attempt, "edit accepted");
                    let diff = diff_bundles(bundle, &new).expect("parsed bundles are closed");
                    return Ok(EditOutcome {
                        new_bundle: new,
                        edit_report,
                        validation,
                        attempts: attempt,
                        transcripts,
                        diff,
                    });
                }
                AttemptFailure::Rejected {
                    edit_report,
                    validation,
                }
            }
        };
        feedback = failure.feedback();
        info!(attempt, problems = feedback.len(), "edit attempt rejected");
        last = Some(failure);
    }
    Err(EditError::Exhausted {
        attempts: options.max_attempts.max(1),
        last: Box::new(last.expect("at least one attempt")),
        transcripts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AddedNode, GenerationSpec, NodeRef, Storyline};

    fn bundle(storylines: Vec<Storyline>, n_beats: u32) -> StoryBundle {
        let beats = (1..=n_beats).map(|i| (BeatId(i), format!("beat {i}"))).collect();
        StoryBundle::from_parts(
            GenerationSpec::new("S", "T", 1, 1, storylines.len() as u32),
            beats,
            storylines,
            BTreeSet::new(),
            String::new(),
        )
        .unwrap()
    }

    #[test]
    fn identity_passes_vacuously() {
        let b = bundle(vec![Storyline::new(1, 1, [1, 2, 3], 1)], 3);
        let r = verify_edit(&b, &b, &EditSet::default());
        assert!(EditCheck::ALL.iter().all(|c| r.passed(*c)));
        assert!(diff_bundles(&b, &b).unwrap().is_empty());
    }

    #[test]
    fn deleted_beat_still_routed() {
        let old = bundle(vec![Storyline::new(1, 1, [1, 9, 3], 1)], 9);
        let edits = EditSet {
            nodes_deleted: [BeatId(9)].into(),
            ..Default::default()
        };
        let r = verify_edit(&old, &old, &edits);
        assert!(!r.passed(EditCheck::E2));
        assert!(r.checks[1].problems[0].contains("beat 9"));
        assert!(r.has_errors());
    }

    #[test]
    fn renumbering_by_description() {
        let mut new = bundle(vec![Storyline::new(1, 1, [1, 2, 5], 1)], 5);
        new.beats.insert(BeatId(5), "The new one.".into());
        let edits = EditSet {
            nodes_added: vec![AddedNode {
                id: BeatId(4),
                description: "the  new one".into(),
            }],
            edges_added: [(BeatId(2), BeatId(4))].into(),
            ..Default::default()
        };
        let moves = align_added_ids(&mut new, &edits);
        assert_eq!(moves, vec![(BeatId(5), BeatId(4))]);
        assert_eq!(new.storylines[0].beats, vec![BeatId(1), BeatId(2), BeatId(4)]);
        assert_eq!(new.beat(BeatId(5)), Some("beat 4"));
        let r = verify_edit(&new, &new, &edits);
        assert!(r.passed(EditCheck::E1) && r.passed(EditCheck::E3));
    }

    #[test]
    fn removed_storyline_in_diff() {
        let old = bundle(
            vec![Storyline::new(1, 1, [1, 2], 1), Storyline::new(2, 1, [1, 3], 1)],
            3,
        );
        let mut new = old.clone();
        new.storylines.pop();
        let d = diff_bundles(&old, &new).unwrap();
        assert_eq!(d.storylines_removed, [2].into());
        assert!(d.beats_removed.is_empty());
        assert!(d.edges_removed.contains(&(NodeRef::beat(1), NodeRef::beat(3))));
    }
}
