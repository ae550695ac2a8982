//! Prompt templates for the three model calls: storyline generation, graph
//! encoding, and edit regeneration.
//!
//! Templates are plain text files (`generate.tmpl`, `graphify.tmpl`,
//! `edit.tmpl`) whose first line is a `## template-version: <id>` header.
//! Placeholders are written `{{name}}`. The default set is compiled in; a
//! directory with the same three files overrides it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{BeatId, EditSet, GenerationSpec, StoryBundle};
use crate::parser::serialize_story_bundle;
use crate::sha256_hex;

const HEADER_PREFIX: &str = "## template-version:";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("EDIT-REF-UNKNOWN: {0}")]
    EditRefUnknown(String),
    #[error("EDIT-ID-CLASH: {0}")]
    EditIdClash(String),
    #[error("EDIT-INCONSISTENT: {0}")]
    EditInconsistent(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::Precondition(_) => "PRECONDITION",
            PromptError::EditRefUnknown(_) => "EDIT-REF-UNKNOWN",
            PromptError::EditIdClash(_) => "EDIT-ID-CLASH",
            PromptError::EditInconsistent(_) => "EDIT-INCONSISTENT",
            PromptError::Template { .. } | PromptError::Io { .. } => "TEMPLATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Generate,
    Graphify,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub kind: PromptKind,
    pub text: String,
    pub input_digest: String,
    pub template_version: String,
}

#[derive(Debug, Clone)]
pub struct Template {
    pub version: String,
    body: String,
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let (first, body) = source.split_once('\n').unwrap_or((source, ""));
        let version = first
            .strip_prefix(HEADER_PREFIX)
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| PromptError::Template {
                name: name.into(),
                message: format!("first line must be \"{HEADER_PREFIX} <id>\""),
            })?;
        Ok(Template {
            version,
            body: body.to_string(),
        })
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub generate: Template,
    pub graphify: Template,
    pub edit: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            generate: Template::parse("generate.tmpl", include_str!("../templates/generate.tmpl"))
                .expect("bundled template"),
            graphify: Template::parse("graphify.tmpl", include_str!("../templates/graphify.tmpl"))
                .expect("bundled template"),
            edit: Template::parse("edit.tmpl", include_str!("../templates/edit.tmpl"))
                .expect("bundled template"),
        }
    }
}

fn digest_inputs(kind: PromptKind, version: &str, inputs: serde_json::Value) -> String {
    let doc = json!({ "kind": kind, "template_version": version, "inputs": inputs });
    sha256_hex(doc.to_string())
}

fn beat_line(id: BeatId, desc: &str) -> String {
    format!("Beat {id}: {desc}")
}

fn lines_or_none(lines: Vec<String>) -> String {
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Checks an edit set against the bundle it applies to.
pub fn check_edits(bundle: &StoryBundle, edits: &EditSet) -> Result<(), PromptError> {
    if edits.is_empty() {
        return Err(PromptError::Precondition("edit set is empty".into()));
    }
    let mut added = std::collections::BTreeSet::new();
    for n in &edits.nodes_added {
        if bundle.beats.contains_key(&n.id) {
            return Err(PromptError::EditIdClash(format!(
                "added beat {} already exists",
                n.id
            )));
        }
        if n.id.0 == 0 {
            return Err(PromptError::EditIdClash("beat ids start at 1".into()));
        }
        if !added.insert(n.id) {
            return Err(PromptError::EditIdClash(format!("beat {} added twice", n.id)));
        }
        if n.description.trim().is_empty() {
            return Err(PromptError::Precondition(format!(
                "added beat {} has no description",
                n.id
            )));
        }
    }
    for id in &edits.nodes_deleted {
        if !bundle.beats.contains_key(id) {
            return Err(PromptError::EditRefUnknown(format!("deleted beat {id} does not exist")));
        }
    }
    let known = |b: &BeatId| bundle.beats.contains_key(b) || added.contains(b);
    for (what, set) in [("added", &edits.edges_added), ("deleted", &edits.edges_deleted)] {
        for (u, v) in set {
            for end in [u, v] {
                if !known(end) {
                    return Err(PromptError::EditRefUnknown(format!(
                        "{what} transition {u}->{v} references unknown beat {end}"
                    )));
                }
            }
        }
    }
    for (u, v) in &edits.edges_added {
        if edits.nodes_deleted.contains(u) || edits.nodes_deleted.contains(v) {
            return Err(PromptError::EditInconsistent(format!(
                "added transition {u}->{v} touches a deleted beat"
            )));
        }
    }
    Ok(())
}

/// Next free beat number after everything in the bundle and the edit set.
pub fn next_beat_id(bundle: &StoryBundle, edits: &EditSet) -> BeatId {
    let max = bundle
        .max_beat_id()
        .into_iter()
        .chain(edits.added_ids())
        .max()
        .map_or(0, |b| b.0);
    BeatId(max + 1)
}

impl TemplateSet {
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let load = |name: &str| {
            let path = dir.join(name);
            let src = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Template::parse(name, &src)
        };
        Ok(TemplateSet {
            generate: load("generate.tmpl")?,
            graphify: load("graphify.tmpl")?,
            edit: load("edit.tmpl")?,
        })
    }

    pub fn generation_prompt(&self, spec: &GenerationSpec) -> PromptText {
        let t = &self.generate;
        let (starts, endings, storylines) = (
            spec.n_starts.to_string(),
            spec.n_endings.to_string(),
            spec.n_storylines.to_string(),
        );
        let text = t.render(&[
            ("story", &spec.story),
            ("setting", &spec.setting),
            ("starts", &starts),
            ("endings", &endings),
            ("storylines", &storylines),
        ]);
        PromptText {
            kind: PromptKind::Generate,
            input_digest: digest_inputs(PromptKind::Generate, &t.version, json!(spec)),
            text,
            template_version: t.version.clone(),
        }
    }

    pub fn graphify_prompt(&self, bundle_text: &str) -> Result<PromptText, PromptError> {
        if bundle_text.trim().is_empty() {
            return Err(PromptError::Precondition("storyline draft is empty".into()));
        }
        let t = &self.graphify;
        let draft = bundle_text.trim_end();
        Ok(PromptText {
            kind: PromptKind::Graphify,
            text: t.render(&[("draft", draft)]),
            input_digest: digest_inputs(PromptKind::Graphify, &t.version, json!(draft)),
            template_version: t.version.clone(),
        })
    }

    /// `feedback` lists the problems with a previous attempt, if any.
    pub fn edit_prompt(
        &self,
        bundle: &StoryBundle,
        edits: &EditSet,
        feedback: &[String],
    ) -> Result<PromptText, PromptError> {
        check_edits(bundle, edits)?;
        let t = &self.edit;
        let original = serialize_story_bundle(bundle);
        let mut added: Vec<_> = edits.nodes_added.iter().collect();
        added.sort_by_key(|n| n.id);
        let nodes_added = lines_or_none(
            added
                .iter()
                .map(|n| beat_line(n.id, n.description.trim()))
                .collect(),
        );
        let nodes_deleted = lines_or_none(
            edits
                .nodes_deleted
                .iter()
                .map(|id| beat_line(*id, bundle.beat(*id).unwrap_or_default()))
                .collect(),
        );
        let transitions = |set: &std::collections::BTreeSet<(BeatId, BeatId)>| {
            lines_or_none(set.iter().map(|(u, v)| format!("Beat {u} -> Beat {v}")).collect())
        };
        let edges_added = transitions(&edits.edges_added);
        let edges_deleted = transitions(&edits.edges_deleted);
        let max_beat = (next_beat_id(bundle, edits).0 - 1).to_string();
        let mut fb = String::new();
        if !feedback.is_empty() {
            fb.push_str("\nYour previous reply was rejected for these reasons. Fix every one of them and reply with the complete document again:\n");
            for f in feedback {
                let _ = writeln!(fb, "- {f}");
            }
        }
        let text = t.render(&[
            ("original", original.trim_end()),
            ("nodes_added", &nodes_added),
            ("nodes_deleted", &nodes_deleted),
            ("edges_added", &edges_added),
            ("edges_deleted", &edges_deleted),
            ("max_beat", &max_beat),
            ("feedback", &fb),
        ]);
        Ok(PromptText {
            kind: PromptKind::Edit,
            input_digest: digest_inputs(
                PromptKind::Edit,
                &t.version,
                json!({ "original": original, "edits": edits, "feedback": feedback }),
            ),
            text,
            template_version: t.version.clone(),
        })
    }
}

pub fn build_generation_prompt(spec: &GenerationSpec) -> PromptText {
    TemplateSet::default().generation_prompt(spec)
}

pub fn build_graphify_prompt(bundle_text: &str) -> Result<PromptText, PromptError> {
    TemplateSet::default().graphify_prompt(bundle_text)
}

pub fn build_edit_prompt(bundle: &StoryBundle, edits: &EditSet) -> Result<PromptText, PromptError> {
    TemplateSet::default().edit_prompt(bundle, edits, &[])
}
