//! Chat-completion access with live, record and replay modes.
//!
//! Replay fixtures are one JSON [`Transcript`] per file, named after the
//! SHA-256 of the normalized prompt text (`<digest>.json`). Replay never
//! touches the network or the credential.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::prompt::PromptText;
use crate::sha256_hex;

pub const ENV_API_KEY: &str = "GRIM_API_KEY";
pub const ENV_ENDPOINT: &str = "GRIM_ENDPOINT";
pub const ENV_MODEL: &str = "GRIM_MODEL";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("NETWORK: {0}")]
    Network(String),
    #[error("RATE-LIMITED: provider kept returning 429 after {0} retries")]
    RateLimited(u32),
    #[error("EMPTY-RESPONSE: provider returned no text")]
    EmptyResponse,
    #[error("FIXTURE-MISS: no replay fixture for prompt digest {0}")]
    FixtureMiss(String),
    #[error("missing credential: set {0}")]
    MissingCredential(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Network(_) => "NETWORK",
            GatewayError::RateLimited(_) => "RATE-LIMITED",
            GatewayError::EmptyResponse => "EMPTY-RESPONSE",
            GatewayError::FixtureMiss(_) => "FIXTURE-MISS",
            GatewayError::MissingCredential(_) => "MISSING-CREDENTIAL",
            GatewayError::Config(_) => "CONFIG",
            GatewayError::Fixture { .. } => "FIXTURE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other:?} (live, record, replay)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub mode: Mode,
    pub fixture_dir: Option<PathBuf>,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4".into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            timeout_secs: 120,
            max_retries: 3,
            mode: Mode::Live,
            fixture_dir: None,
            credential_env: ENV_API_KEY.into(),
            backoff_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn replay(fixture_dir: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            mode: Mode::Replay,
            fixture_dir: Some(fixture_dir.into()),
            ..Default::default()
        }
    }

    /// Applies `GRIM_ENDPOINT` and `GRIM_MODEL` overrides.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            if !v.trim().is_empty() {
                self.endpoint = v;
            }
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            if !v.trim().is_empty() {
                self.model_name = v;
            }
        }
        self
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config("temperature must be within [0, 2]".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be positive".into()));
        }
        match (self.mode, &self.fixture_dir) {
            (Mode::Replay, None) | (Mode::Record, None) => {
                Err(GatewayError::Config("record and replay need a fixture directory".into()))
            }
            (Mode::Replay, Some(d)) if !d.is_dir() => Err(GatewayError::Config(format!(
                "fixture directory {} does not exist",
                d.display()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt_digest: String,
    pub prompt_text: String,
    pub response_text: String,
    pub model_name: String,
    pub template_version: String,
    pub timestamp: DateTime<Utc>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub transcript: Transcript,
}

/// Anything that turns a prompt into model text.
pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &PromptText) -> Result<Completion, GatewayError>;
}

/// Line endings unified, trailing whitespace stripped from every line and
/// from the end of the text.
pub fn normalize_prompt(text: &str) -> String {
    text.replace("\r\n", "\n")
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end()
        .to_string()
}

pub fn prompt_digest(text: &str) -> String {
    sha256_hex(normalize_prompt(text))
}

/// Current time, or `SOURCE_DATE_EPOCH` when set so replayed runs stay
/// byte-reproducible.
pub fn now() -> DateTime<Utc> {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now)
}

#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<Option<Transcript>, GatewayError> {
        let path = self.path_for(digest);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(fixture_err(&path, e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| fixture_err(&path, e))
    }

    /// Writes via a temporary file and rename; concurrent writers of one
    /// digest resolve last-writer-wins.
    pub fn save(&self, t: &Transcript) -> Result<PathBuf, GatewayError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| fixture_err(&self.dir, e))?;
        let path = self.path_for(&t.prompt_digest);
        let tmp = self.dir.join(format!(
            ".{}.{}.tmp",
            t.prompt_digest,
            std::process::id() as u64 ^ (Utc::now().timestamp_subsec_nanos() as u64)
        ));
        let body = serde_json::to_string_pretty(t).expect("transcript serializes") + "\n";
        std::fs::write(&tmp, body).map_err(|e| fixture_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| fixture_err(&path, e))?;
        Ok(path)
    }

    /// Stores a canned response for `prompt`, as if it had been recorded.
    pub fn put(
        &self,
        prompt: &PromptText,
        response: &str,
        model_name: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<PathBuf, GatewayError> {
        self.save(&Transcript {
            prompt_digest: prompt_digest(&prompt.text),
            prompt_text: prompt.text.clone(),
            response_text: response.to_string(),
            model_name: model_name.to_string(),
            template_version: prompt.template_version.clone(),
            timestamp,
            latency_ms: 0,
        })
    }
}

fn fixture_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Fixture {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub struct Gateway {
    config: ProviderConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl Gateway {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.check()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(Gateway { config, agent })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn fixtures(&self) -> Option<FixtureStore> {
        self.config.fixture_dir.as_ref().map(FixtureStore::new)
    }

    fn call_once(&self, key: &str, prompt: &str) -> Attempt {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        });
        let resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(GatewayError::Network(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status == 429 {
            return Attempt::Retry(GatewayError::RateLimited(self.config.max_retries));
        }
        if status >= 500 {
            return Attempt::Retry(GatewayError::Network(format!("provider returned {status}")));
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal(GatewayError::Network(format!(
                "provider rejected request ({status}): {detail}"
            )));
        }
        let v: Value = match resp.body_mut().read_json() {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(GatewayError::Network(format!("bad response body: {e}"))),
        };
        let text = v
            .pointer("/choices/0/message/content")
            .or_else(|| v.pointer("/choices/0/text"))
            .and_then(Value::as_str)
            .unwrap_or_default();
        if text.trim().is_empty() {
            Attempt::Fatal(GatewayError::EmptyResponse)
        } else {
            Attempt::Done(text.to_string())
        }
    }

    fn live(&self, prompt: &PromptText) -> Result<Completion, GatewayError> {
        let key = std::env::var(&self.config.credential_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::MissingCredential(self.config.credential_env.clone()))?;
        let started = Instant::now();
        let mut attempt = 0;
        let text = loop {
            match self.call_once(&key, &prompt.text) {
                Attempt::Done(t) => break t,
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.config.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    warn!(error = %e, attempt, delay_ms = delay, "provider call failed, retrying");
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        };
        let transcript = Transcript {
            prompt_digest: prompt_digest(&prompt.text),
            prompt_text: prompt.text.clone(),
            response_text: text.clone(),
            model_name: self.config.model_name.clone(),
            template_version: prompt.template_version.clone(),
            timestamp: now(),
            latency_ms: started.elapsed().as_millis() as u64,
        };
        Ok(Completion { text, transcript })
    }
}

impl Provider for Gateway {
    fn complete(&self, prompt: &PromptText) -> Result<Completion, GatewayError> {
        match self.config.mode {
            Mode::Live => self.live(prompt),
            Mode::Record => {
                let c = self.live(prompt)?;
                let path = self.fixtures().expect("checked").save(&c.transcript)?;
                debug!(path = %path.display(), "recorded fixture");
                Ok(c)
            }
            Mode::Replay => {
                let digest = prompt_digest(&prompt.text);
                let mut t = self
                    .fixtures()
                    .expect("checked")
                    .load(&digest)?
                    .ok_or(GatewayError::FixtureMiss(digest))?;
                t.latency_ms = 0;
                Ok(Completion {
                    text: t.response_text.clone(),
                    transcript: t,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptKind;

    fn prompt(text: &str) -> PromptText {
        PromptText {
            kind: PromptKind::Generate,
            text: text.into(),
            input_digest: "x".into(),
            template_version: "t/1".into(),
        }
    }

    #[test]
    fn digest_ignores_trailing_whitespace() {
        assert_eq!(prompt_digest("a  \nb\n\n"), prompt_digest("a\r\nb"));
        assert_ne!(prompt_digest("a\nb"), prompt_digest("a b"));
    }

    #[test]
    fn replay_hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let p = prompt("hello");
        let ts = DateTime::from_timestamp(1_700_000_000, 0).unwrap();
        store.put(&p, "world", "m", ts).unwrap();
        let gw = Gateway::new(ProviderConfig::replay(dir.path())).unwrap();
        for _ in 0..3 {
            let c = gw.complete(&p).unwrap();
            assert_eq!(c.text, "world");
            assert_eq!(c.transcript.latency_ms, 0);
        }
        match gw.complete(&prompt("other")) {
            Err(GatewayError::FixtureMiss(d)) => assert_eq!(d, prompt_digest("other")),
            other => panic!("expected miss, got {other:?}"),
        }
    }

    #[test]
    fn config_checks() {
        assert!(ProviderConfig::replay("/definitely/not/here").check().is_err());
        let hot = ProviderConfig {
            temperature: 2.5,
            ..ProviderConfig::default()
        };
        assert!(hot.check().is_err());
        assert!(ProviderConfig::default().check().is_ok());
    }

    #[test]
    fn live_without_credential() {
        let gw = Gateway::new(ProviderConfig {
            credential_env: "GRIM_TEST_UNSET_KEY_VARIABLE".into(),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(gw.complete(&prompt("x")).unwrap_err().code(), "MISSING-CREDENTIAL");
    }
}
