//! End-to-end flows built from the individual stages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, Provider, Transcript};
use crate::graph::{
    build_render_payload, parse_render_payload, reconcile, PayloadWarning, ReconcileReport,
    RenderPayload,
};
use crate::model::{GenerationSpec, ModelError, StoryBundle};
use crate::parser::{parse_storyline_document, serialize_story_bundle, ParseDiagnostic};
use crate::prompt::{PromptError, TemplateSet};
use crate::validate::{validate_with, ValidationReport, ValidatorConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model reply did not parse ({} error(s))", .diagnostics.iter().filter(|d| d.severity == crate::Severity::Error).count())]
    Parse {
        diagnostics: Vec<ParseDiagnostic>,
        transcript: Box<Transcript>,
    },
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Model(_) => "MODEL",
            PipelineError::Prompt(e) => e.code(),
            PipelineError::Gateway(e) => e.code(),
            PipelineError::Parse { .. } => "PARSE",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generation {
    pub bundle: StoryBundle,
    pub validation: ValidationReport,
    pub payload: RenderPayload,
    pub parse_warnings: Vec<ParseDiagnostic>,
    pub transcript: Transcript,
}

/// Prompt, complete, parse, validate and build the render payload.
pub fn generate(
    spec: &GenerationSpec,
    provider: &dyn Provider,
    templates: &TemplateSet,
    validator: &ValidatorConfig,
) -> Result<Generation, PipelineError> {
    spec.check()?;
    let prompt = templates.generation_prompt(spec);
    let completion = provider.complete(&prompt)?;
    let outcome = parse_storyline_document(&completion.text, spec);
    let (bundle, diagnostics) = match outcome.bundle {
        Some(b) if !outcome.diagnostics.iter().any(|d| d.severity == crate::Severity::Error) => {
            (b, outcome.diagnostics)
        }
        _ => {
            return Err(PipelineError::Parse {
                diagnostics: outcome.diagnostics,
                transcript: Box::new(completion.transcript),
            })
        }
    };
    let validation = validate_with(&bundle, validator);
    let payload = build_render_payload(&bundle)?;
    Ok(Generation {
        bundle,
        validation,
        payload,
        parse_warnings: diagnostics,
        transcript: completion.transcript,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Graphified {
    /// Deterministic structure, with the model's wording where it agreed.
    pub payload: RenderPayload,
    /// `None` when the reply was not a usable payload at all.
    pub reconcile: Option<ReconcileReport>,
    pub warnings: Vec<PayloadWarning>,
    pub unparsed_reason: Option<String>,
    pub transcript: Transcript,
}

/// Asks the model for the render payload and repairs it against the
/// deterministic one.
pub fn graphify(
    bundle: &StoryBundle,
    provider: &dyn Provider,
    templates: &TemplateSet,
) -> Result<Graphified, PipelineError> {
    let prompt = templates.graphify_prompt(&serialize_story_bundle(bundle))?;
    let completion = provider.complete(&prompt)?;
    let (payload, reconcile_report, warnings, unparsed_reason) =
        match parse_render_payload(&completion.text) {
            Ok((candidate, warnings)) => {
                let (report, repaired) = reconcile(&candidate, bundle)?;
                (repaired, Some(report), warnings, None)
            }
            Err(e) => (build_render_payload(bundle)?, None, Vec::new(), Some(e.to_string())),
        };
    Ok(Graphified {
        payload,
        reconcile: reconcile_report,
        warnings,
        unparsed_reason,
        transcript: completion.transcript,
    })
}
