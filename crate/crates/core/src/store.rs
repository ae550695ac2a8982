//! Versioned project files: one JSON document per project holding the
//! generation request and every bundle version with its payload, provenance
//! and transcripts.

use std::fs::{File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::edit::{apply_edit, EditError, EditOptions, EditOutcome};
use crate::gateway::{now, Provider, Transcript};
use crate::graph::{build_render_payload, RenderPayload};
use crate::model::{EditSet, GenerationSpec, StoryBundle};
use crate::pipeline::Generation;
use crate::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;
pub const FILE_SUFFIX: &str = ".grim.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("SCHEMA-VERSION-UNSUPPORTED: {0}")]
    SchemaVersion(String),
    #[error("CORRUPT: {0}")]
    Corrupt(String),
    #[error("VERSION-UNKNOWN: project {project} has no version {version}")]
    VersionUnknown { project: String, version: u32 },
    #[error("{0} is being written by another process")]
    Locked(String),
    #[error("invalid project id {0:?}: use letters, digits, '-' or '_'")]
    InvalidId(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "IO",
            StoreError::SchemaVersion(_) => "SCHEMA-VERSION-UNSUPPORTED",
            StoreError::Corrupt(_) => "CORRUPT",
            StoreError::VersionUnknown { .. } => "VERSION-UNKNOWN",
            StoreError::Locked(_) => "LOCKED",
            StoreError::InvalidId(_) => "INVALID-ID",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    Generated,
    Edited { from_version: u32, edits: EditSet },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Version {
    pub version: u32,
    pub created: DateTime<Utc>,
    pub provenance: Provenance,
    pub bundle: StoryBundle,
    /// SHA-256 of `bundle.raw_text`, checked on load.
    pub raw_text_sha256: String,
    pub payload: RenderPayload,
    pub transcripts: Vec<Transcript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Project {
    pub schema_version: u32,
    pub id: String,
    pub spec: GenerationSpec,
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
    pub versions: Vec<Version>,
}

pub fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

impl Project {
    pub fn new(id: impl Into<String>, spec: GenerationSpec) -> Result<Self, StoreError> {
        let id = id.into();
        check_id(&id)?;
        let t = now();
        Ok(Project {
            schema_version: SCHEMA_VERSION,
            id,
            spec,
            created: t,
            updated: t,
            versions: Vec::new(),
        })
    }

    pub fn file_name(&self) -> String {
        format!("{}{FILE_SUFFIX}", self.id)
    }

    pub fn current(&self) -> Option<&Version> {
        self.versions.last()
    }

    pub fn version(&self, version: u32) -> Result<&Version, StoreError> {
        version
            .checked_sub(1)
            .and_then(|i| self.versions.get(i as usize))
            .ok_or_else(|| StoreError::VersionUnknown {
                project: self.id.clone(),
                version,
            })
    }

    /// Appends a version and returns its number. Stored versions are never
    /// modified afterwards.
    pub fn push_version(
        &mut self,
        bundle: StoryBundle,
        payload: RenderPayload,
        provenance: Provenance,
        transcripts: Vec<Transcript>,
    ) -> u32 {
        let version = self.versions.len() as u32 + 1;
        let created = now();
        self.versions.push(Version {
            version,
            created,
            provenance,
            raw_text_sha256: sha256_hex(&bundle.raw_text),
            bundle,
            payload,
            transcripts,
        });
        self.updated = created;
        version
    }

    pub fn push_generation(&mut self, generation: &Generation) -> u32 {
        self.push_version(
            generation.bundle.clone(),
            generation.payload.clone(),
            Provenance::Generated,
            vec![generation.transcript.clone()],
        )
    }

    /// Regenerates the latest version through `provider` and appends the
    /// accepted result.
    pub fn apply_edit(
        &mut self,
        edits: &EditSet,
        provider: &dyn Provider,
        options: &EditOptions,
    ) -> Result<(u32, EditOutcome), EditError> {
        let Some(current) = self.current() else {
            return Err(EditError::Prompt(crate::prompt::PromptError::Precondition(
                "project has no version to edit".into(),
            )));
        };
        let from_version = current.version;
        let outcome = apply_edit(&current.bundle, edits, provider, options)?;
        let payload =
            build_render_payload(&outcome.new_bundle).expect("accepted bundles are closed");
        let v = self.push_version(
            outcome.new_bundle.clone(),
            payload,
            Provenance::Edited {
                from_version,
                edits: edits.clone(),
            },
            outcome.transcripts.clone(),
        );
        Ok((v, outcome))
    }

    pub fn to_json_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("project serializes") + "\n"
    }

    pub fn from_json_text(text: &str) -> Result<Self, StoreError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| StoreError::Corrupt(format!("not a JSON document: {e}")))?;
        match value.get("schema_version").and_then(Value::as_u64) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(StoreError::SchemaVersion(format!(
                    "file has schema_version {v}, this build reads {SCHEMA_VERSION}"
                )))
            }
            None => {
                return Err(StoreError::SchemaVersion(
                    "schema_version missing or not an integer".into(),
                ))
            }
        }
        let project: Project = serde_json::from_value(value)
            .map_err(|e| StoreError::Corrupt(format!("unexpected project layout: {e}")))?;
        check_id(&project.id)?;
        for (i, v) in project.versions.iter().enumerate() {
            if v.version != i as u32 + 1 {
                return Err(StoreError::Corrupt(format!(
                    "version numbers are not contiguous at position {}",
                    i + 1
                )));
            }
            if sha256_hex(&v.bundle.raw_text) != v.raw_text_sha256 {
                return Err(StoreError::Corrupt(format!(
                    "raw text of version {} does not match its hash",
                    v.version
                )));
            }
        }
        Ok(project)
    }

    /// Writes atomically while holding an exclusive advisory lock on
    /// `<path>.lock`; a second concurrent writer gets [`StoreError::Locked`].
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let _guard = WriteLock::acquire(path)?;
        let tmp = sibling(path, ".tmp");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(self.to_json_text().as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_text(&text)
    }

    pub fn export_render_payload(&self, version: u32, path: &Path) -> Result<(), StoreError> {
        let v = self.version(version)?;
        std::fs::write(path, v.payload.to_json_text()).map_err(io_err(path))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct WriteLock {
    file: File,
}

impl WriteLock {
    fn acquire(path: &Path) -> Result<Self, StoreError> {
        let lock_path = sibling(path, ".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match file.try_lock() {
            Ok(()) => Ok(WriteLock { file }),
            Err(TryLockError::WouldBlock) => Err(StoreError::Locked(path.display().to_string())),
            Err(TryLockError::Error(e)) => Err(io_err(&lock_path)(e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}
