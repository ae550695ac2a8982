//! HTTP API over project files: create, generate, browse versions, and
//! submit designer edits for regeneration.
//!
//! Every body is JSON. Mutating requests on one project are serialized; a
//! second one arriving while the first is still running gets `409`.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tracing::info;

use grim_core::edit::{BundleDiff, EditError, EditOptions, EditReport};
use grim_core::gateway::{GatewayError, Provider};
use grim_core::model::{BeatId, EditSet, GenerationSpec, StoryBundle};
use grim_core::pipeline::{generate, PipelineError};
use grim_core::prompt::TemplateSet;
use grim_core::store::{Project, Provenance, StoreError, FILE_SUFFIX};
use grim_core::validate::{computed_common_beats, validate_with, ValidatorConfig};
use grim_core::ValidationReport;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Box<Value>>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = Some(Box::new(details));
        self
    }

    fn not_found(what: String) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "NOT-FOUND", what)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD-REQUEST", r.body_text())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::VersionUnknown { .. } => StatusCode::NOT_FOUND,
            StoreError::Locked(_) => StatusCode::CONFLICT,
            StoreError::InvalidId(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError::new(StatusCode::BAD_GATEWAY, e.code(), e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::Parse { diagnostics, .. } => ApiError::new(
                StatusCode::BAD_GATEWAY,
                "PARSE",
                "model reply did not parse as a storyline document",
            )
            .with_details(json!({ "diagnostics": diagnostics })),
            PipelineError::Model(m) => ApiError::new(StatusCode::BAD_REQUEST, "MODEL", m.to_string()),
            PipelineError::Prompt(p) => ApiError::new(StatusCode::BAD_REQUEST, p.code(), p.to_string()),
        }
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::Prompt(p) => {
                ApiError::new(StatusCode::BAD_REQUEST, p.code(), p.to_string())
            }
            EditError::Gateway(g) => g.into(),
            EditError::Exhausted { attempts, ref last, .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "EDIT-EXHAUSTED", e.to_string())
                    .with_details(json!({
                        "attempts": attempts,
                        "last_failure": last,
                        "failed_checks": last.feedback(),
                    }))
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    project_dir: PathBuf,
    provider: Arc<dyn Provider>,
    templates: TemplateSet,
    edit_options: EditOptions,
    validator: ValidatorConfig,
    busy: Mutex<HashSet<String>>,
}

/// Marks a project busy for as long as it lives.
struct BusyGuard {
    state: AppState,
    id: String,
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.state.inner.busy.lock().unwrap().remove(&self.id);
    }
}

impl AppState {
    pub fn new(project_dir: impl Into<PathBuf>, provider: Arc<dyn Provider>) -> Self {
        AppState {
            inner: Arc::new(Inner {
                project_dir: project_dir.into(),
                provider,
                templates: TemplateSet::default(),
                edit_options: EditOptions::default(),
                validator: ValidatorConfig::default(),
                busy: Mutex::new(HashSet::new()),
            }),
        }
    }

    fn path(&self, id: &str) -> PathBuf {
        self.inner.project_dir.join(format!("{id}{FILE_SUFFIX}"))
    }

    fn load(&self, id: &str) -> ApiResult<Project> {
        grim_core::store::check_id(id).map_err(|_| ApiError::not_found(format!("no project {id}")))?;
        let path = self.path(id);
        if !path.exists() {
            return Err(ApiError::not_found(format!("no project {id}")));
        }
        Ok(Project::load(&path)?)
    }

    fn save(&self, project: &Project) -> ApiResult<()> {
        Ok(project.save(&self.path(&project.id))?)
    }

    fn claim(&self, id: &str) -> ApiResult<BusyGuard> {
        let mut busy = self.inner.busy.lock().unwrap();
        if !busy.insert(id.to_string()) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "BUSY",
                format!("project {id} already has a request in flight"),
            ));
        }
        Ok(BusyGuard {
            state: self.clone(),
            id: id.to_string(),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateProject {
    pub spec: GenerationSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub project_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Generated {
    pub version: u32,
    pub validation: ValidationReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VersionSummary {
    pub version: u32,
    pub created: String,
    pub provenance: Provenance,
    pub beats: usize,
    pub storylines: usize,
    pub errors: usize,
    pub warnings: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StorylinesView {
    pub version: u32,
    #[serde(flatten)]
    pub bundle: StoryBundle,
    pub computed_common_beats: Vec<BeatId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditAccepted {
    pub new_version: u32,
    pub attempts: u32,
    pub edit_report: EditReport,
    pub validation: ValidationReport,
    pub diff: BundleDiff,
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_project(
    State(state): State<AppState>,
    body: Result<Json<CreateProject>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let Json(req) = body?;
    req.spec
        .check()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID-SPEC", e.to_string()))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let project = Project::new(&id, req.spec)?;
    state.save(&project)?;
    info!(%id, "project created");
    Ok((StatusCode::CREATED, Json(Created { project_id: id })))
}

async fn generate_version(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Generated>> {
    let guard = state.claim(&id)?;
    let mut project = state.load(&id)?;
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let inner = &st.inner;
        let g = generate(
            &project.spec,
            inner.provider.as_ref(),
            &inner.templates,
            &inner.validator,
        )?;
        let version = project.push_generation(&g);
        st.save(&project)?;
        Ok(Json(Generated {
            version,
            validation: g.validation,
        }))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn list_versions(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<VersionSummary>>> {
    let project = state.load(&id)?;
    let edited = ValidatorConfig::for_edits();
    Ok(Json(
        project
            .versions
            .iter()
            .map(|v| {
                let cfg = match v.provenance {
                    Provenance::Generated => &state.inner.validator,
                    Provenance::Edited { .. } => &edited,
                };
                let report = validate_with(&v.bundle, cfg);
                VersionSummary {
                    version: v.version,
                    created: v.created.to_rfc3339(),
                    provenance: v.provenance.clone(),
                    beats: v.bundle.beats.len(),
                    storylines: v.bundle.storylines.len(),
                    errors: report.errors().count(),
                    warnings: report.warnings().count(),
                }
            })
            .collect(),
    ))
}

async fn get_graph(
    State(state): State<AppState>,
    Path((id, version)): Path<(String, u32)>,
) -> ApiResult<Json<Value>> {
    let project = state.load(&id)?;
    Ok(Json(project.version(version)?.payload.to_value()))
}

async fn get_storylines(
    State(state): State<AppState>,
    Path((id, version)): Path<(String, u32)>,
) -> ApiResult<Json<StorylinesView>> {
    let project = state.load(&id)?;
    let v = project.version(version)?;
    Ok(Json(StorylinesView {
        version: v.version,
        computed_common_beats: computed_common_beats(&v.bundle).into_iter().collect(),
        bundle: v.bundle.clone(),
    }))
}

async fn submit_edit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<EditSet>, JsonRejection>,
) -> ApiResult<Json<EditAccepted>> {
    let Json(edits) = body?;
    let guard = state.claim(&id)?;
    let mut project = state.load(&id)?;
    if project.versions.is_empty() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "NO-VERSION",
            "generate the project before editing it",
        ));
    }
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let inner = &st.inner;
        let (new_version, outcome) =
            project.apply_edit(&edits, inner.provider.as_ref(), &inner.edit_options)?;
        st.save(&project)?;
        Ok(Json(EditAccepted {
            new_version,
            attempts: outcome.attempts,
            edit_report: outcome.edit_report,
            validation: outcome.validation,
            diff: outcome.diff,
        }))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

fn cors() -> CorsLayer {
    CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| {
            let o = origin.as_bytes();
            ["http://localhost", "http://127.0.0.1", "https://localhost"]
                .iter()
                .any(|p| o == p.as_bytes() || o.starts_with(format!("{p}:").as_bytes()))
        }))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE])
}

/// All API routes; the UI, when given, is served for every other path.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/projects", post(create_project))
        .route("/projects/{id}/generate", post(generate_version))
        .route("/projects/{id}/versions", get(list_versions))
        .route("/projects/{id}/versions/{v}/graph", get(get_graph))
        .route("/projects/{id}/versions/{v}/storylines", get(get_storylines))
        .route("/projects/{id}/edits", post(submit_edit))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors())
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub project_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

pub async fn serve(config: ServerConfig, provider: Arc<dyn Provider>) -> std::io::Result<()> {
    if !config.project_dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("project directory {} does not exist", config.project_dir.display()),
        ));
    }
    let app = router(AppState::new(&config.project_dir, provider), config.static_dir);
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
