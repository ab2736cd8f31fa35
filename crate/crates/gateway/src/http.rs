//! JSON HTTP API consumed by the web console.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, patch, post};
use axum::{Json, Router};
use musicagent_core::agent::{AgentError, ArtifactRef, ChatResult, MusicAgent, SessionView};
use musicagent_core::planner::PlannerError;
use musicagent_core::registry::{AttrValue, RegistryError, ToolDescriptor};
use musicagent_core::taxonomy::{Modality, TaskSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

/// Largest accepted request body (uploads included).
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

type Agent = Arc<MusicAgent>;

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ArtifactQuery {
    pub session: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub llm: String,
    pub tasks: usize,
    pub tools: usize,
}

/// Error body: `{"error": <class>, "message": <text>}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub class: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(class: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            class,
            message: message.into(),
        }
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        use AgentError as E;
        let (status, class) = match &e {
            E::EmptyRequest => (StatusCode::BAD_REQUEST, "EmptyRequest"),
            E::InvalidSessionId(_) => (StatusCode::BAD_REQUEST, "InvalidSessionId"),
            E::UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            E::UnknownArtifact(_) => (StatusCode::NOT_FOUND, "UnknownArtifact"),
            E::AmbiguousArtifact(_) => (StatusCode::CONFLICT, "AmbiguousArtifact"),
            E::DecodeFailure { .. } => (StatusCode::BAD_REQUEST, "DecodeFailure"),
            E::UnsupportedModality(_) => (StatusCode::BAD_REQUEST, "UnsupportedModality"),
            E::Registry(RegistryError::UnknownTool(_)) => (StatusCode::NOT_FOUND, "UnknownTool"),
            E::Registry(RegistryError::NegativeAttribute(_)) => (StatusCode::BAD_REQUEST, "NegativeAttribute"),
            E::Registry(_) => (StatusCode::BAD_REQUEST, "RegistryError"),
            E::Taxonomy(_) => (StatusCode::BAD_REQUEST, "TaxonomyError"),
            E::Planner(PlannerError::EmptyRequest) => (StatusCode::BAD_REQUEST, "EmptyRequest"),
            E::Planner(_) => (StatusCode::UNPROCESSABLE_ENTITY, "PlannerError"),
            E::Storage(_) | E::Startup { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure"),
        };
        Self {
            status,
            class,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.class, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Run blocking agent work off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, AgentError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            class: "Internal",
            message: e.to_string(),
        }),
    }
}

/// All API routes, plus the console's static files when configured.
pub fn router(agent: Agent) -> Router {
    let static_dir = agent.config().paths.static_dir.clone();
    let api = Router::new()
        .route("/chat", post(chat))
        .route("/tasks", get(tasks))
        .route("/tools", get(tools))
        .route("/tools/{id}/attributes", patch(update_attributes))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/history", delete(clear_history))
        .route("/sessions/{id}/artifacts", post(upload))
        .route("/artifacts/{id}", get(artifact))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(agent);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn chat(State(agent): State<Agent>, Json(req): Json<ChatRequest>) -> ApiResult<Json<ChatResult>> {
    blocking(move || agent.chat(req.session_id.as_deref(), &req.text)).await.map(Json)
}

async fn tasks(State(agent): State<Agent>) -> Json<Vec<TaskSpec>> {
    Json(agent.tasks())
}

async fn tools(State(agent): State<Agent>) -> Json<Vec<ToolDescriptor>> {
    Json(agent.tools())
}

async fn update_attributes(
    State(agent): State<Agent>,
    Path(id): Path<String>,
    Json(patch): Json<BTreeMap<String, AttrValue>>,
) -> ApiResult<Json<ToolDescriptor>> {
    Ok(Json(agent.update_tool_attributes(&id, patch)?))
}

async fn session(State(agent): State<Agent>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    blocking(move || agent.session_view(&id)).await.map(Json)
}

async fn clear_history(State(agent): State<Agent>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    blocking(move || agent.clear_history(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

/// Multipart upload: a `file` part plus an optional `modality` field. When
/// the field is absent the modality comes from the part's content type or
/// file extension.
async fn upload(
    State(agent): State<Agent>,
    Path(id): Path<String>,
    mut form: Multipart,
) -> ApiResult<(StatusCode, Json<ArtifactRef>)> {
    let mut declared: Option<String> = None;
    let mut inferred: Option<Modality> = None;
    let mut payload: Option<Bytes> = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("MalformedUpload", e.to_string()))?
    {
        match field.name() {
            Some("modality") => {
                let text = field.text().await.map_err(|e| ApiError::bad_request("MalformedUpload", e.to_string()))?;
                declared = Some(text.trim().to_string());
            }
            Some("file") | None => {
                inferred = field
                    .content_type()
                    .and_then(Modality::from_content_type)
                    .or_else(|| {
                        let name = field.file_name()?;
                        Modality::from_extension(std::path::Path::new(name).extension()?.to_str()?)
                    });
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request("MalformedUpload", e.to_string()))?;
                payload = Some(bytes);
            }
            Some(_) => {}
        }
    }
    let bytes = payload.ok_or_else(|| ApiError::bad_request("MalformedUpload", "missing `file` part"))?;
    let modality = match declared {
        Some(m) => m.parse::<Modality>().map_err(|_| AgentError::UnsupportedModality(m))?,
        None => inferred.ok_or_else(|| AgentError::UnsupportedModality("unknown".into()))?,
    };
    let created = blocking(move || agent.upload_artifact(&id, &bytes, modality)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn artifact(
    State(agent): State<Agent>,
    Path(id): Path<String>,
    Query(q): Query<ArtifactQuery>,
) -> ApiResult<Response> {
    let (meta, bytes) = blocking(move || agent.artifact(q.session.as_deref(), &id)).await?;
    let disposition = format!("inline; filename=\"{}.{}\"", meta.id, meta.modality.extension());
    Ok((
        [
            (header::CONTENT_TYPE, meta.modality.content_type().to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

async fn healthz(State(agent): State<Agent>) -> Json<Health> {
    Json(Health {
        status: "ok",
        llm: agent.llm().backend_name().to_string(),
        tasks: agent.tasks().len(),
        tools: agent.tools().len(),
    })
}
