//! Branching narrative graphs: generation prompts, storyline parsing,
//! constraint validation, render payloads and designer-driven regeneration.

pub mod edit;
pub mod gateway;
pub mod graph;
pub mod model;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod store;
pub mod validate;

use serde::{Deserialize, Serialize};

pub use model::{
    merge_transitions, storyline_transitions, AddedNode, Beat, BeatId, EditSet, EndLabel,
    GenerationSpec, NarrativeGraph, NodeRef, StartLabel, StoryBundle, Storyline,
};
pub use parser::{parse_storyline_document, serialize_story_bundle, ParseDiagnostic};
pub use validate::{validate, ValidationReport, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

/// Hex SHA-256 of `bytes`.
pub(crate) fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes.as_ref()))
}
