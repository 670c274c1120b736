//! HTTP routes.
//!
//! | method | path                         | purpose                               |
//! |--------|------------------------------|---------------------------------------|
//! | POST   | `/sessions`                  | create a session                      |
//! | POST   | `/sessions/{id}/messages`    | run one dialogue turn (JSON or multipart) |
//! | GET    | `/sessions/{id}/state`       | attribute table and history summary   |
//! | GET    | `/sessions/{id}/history`     | full turn records with step traces    |
//! | GET    | `/sessions/{id}/status`      | busy flag                             |
//! | GET    | `/assets/music/{file}`       | stored loop as WAV                    |
//!
//! Every response body is JSON. Errors carry `error` (a stable kind),
//! `message`, and `steps` when tool calls ran before a turn failed.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use loopsmith_core::audio::{AssetId, AudioAsset};
use loopsmith_core::gat::GlobalAttributeTable;
use loopsmith_core::handler::{DialogueTurn, Engine, Session, StepRecord, TurnError};

use crate::sessions::{SessionError, SessionStore};

/// Shared state behind every route.
#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub sessions: Arc<SessionStore>,
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/history", get(get_history))
        .route("/sessions/{id}/status", get(get_status))
        .route("/assets/music/{file}", get(get_asset))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepRecord>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
                steps: Vec::new(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match e {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::Busy(_) => (StatusCode::CONFLICT, "busy"),
            SessionError::Capacity(_) => (StatusCode::SERVICE_UNAVAILABLE, "capacity"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<TurnError> for ApiError {
    fn from(e: TurnError) -> Self {
        let (status, kind) = match &e {
            TurnError::EmptyQuery => (StatusCode::BAD_REQUEST, "bad_request"),
            TurnError::Preprocess(_) => (StatusCode::UNPROCESSABLE_ENTITY, "upload_failed"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "turn_failed"),
        };
        let mut err = Self::new(status, kind, e.to_string());
        err.body.steps = e.steps().to_vec();
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
}

async fn create_session(State(app): State<AppState>) -> ApiResult<(StatusCode, Json<CreatedSession>)> {
    let session_id = app.sessions.create()?;
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id })))
}

/// JSON body of a message. `audio` names an asset already in the store.
#[derive(Debug, Deserialize)]
struct MessageJson {
    text: String,
    #[serde(default)]
    audio: Option<String>,
}

enum Attachment {
    None,
    Stored(String),
    Upload(Bytes),
}

/// Reads `text` plus optional `audio` from either a JSON or a
/// `multipart/form-data` body.
async fn read_message(request: Request) -> ApiResult<(String, Attachment)> {
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let Json(body) = Json::<MessageJson>::from_request(request, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let attachment = body.audio.map_or(Attachment::None, Attachment::Stored);
        return Ok((body.text, attachment));
    }
    let mut multipart = Multipart::from_request(request, &())
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut text = None;
    let mut attachment = Attachment::None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        match field.name() {
            Some("text") => text = Some(field.text().await.map_err(|e| ApiError::bad_request(e.body_text()))?),
            Some("audio") => {
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                if !bytes.is_empty() {
                    attachment = Attachment::Upload(bytes);
                }
            }
            _ => {}
        }
    }
    let text = text.ok_or_else(|| ApiError::bad_request("missing 'text' field"))?;
    Ok((text, attachment))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnResponse {
    pub answer: String,
    pub produced_assets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_asset: Option<String>,
    pub steps: Vec<StepRecord>,
    pub gat: GlobalAttributeTable,
}

fn paths(assets: &[AudioAsset]) -> Vec<String> {
    assets.iter().map(|a| a.relative_path.clone()).collect()
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    request: Request,
) -> ApiResult<Json<TurnResponse>> {
    // Fail fast on unknown or busy sessions before reading an upload.
    app.sessions.status(&id)?;
    let (text, attachment) = read_message(request).await?;
    let guard = app.sessions.begin_turn(&id)?;
    let engine = app.engine.clone();
    let outcome = tokio::task::spawn_blocking(move || -> ApiResult<(DialogueTurn, GlobalAttributeTable)> {
        let attached = match attachment {
            Attachment::None => None,
            Attachment::Stored(path) => Some(
                engine
                    .resolve_asset_reference(&path)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?,
            ),
            Attachment::Upload(bytes) => Some(
                engine
                    .store()
                    .import_wav(&bytes)
                    .map_err(|e| ApiError::bad_request(format!("invalid upload: {e}")))?,
            ),
        };
        let mut session = guard.working_copy();
        let turn = engine.handle_query(&mut session, &text, attached.as_ref())?;
        let gat = session.gat.clone();
        guard.commit(session);
        Ok((turn, gat))
    })
    .await
    .map_err(|e| ApiError::internal(format!("turn task failed: {e}")))?;
    let (turn, gat) = outcome?;
    Ok(Json(TurnResponse {
        answer: turn.answer,
        produced_assets: paths(&turn.produced_assets),
        attached_asset: turn.attached_asset.map(|a| a.relative_path),
        steps: turn.steps,
        gat,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnSummary {
    pub query: String,
    pub answer: String,
    pub produced_assets: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateResponse {
    pub session_id: String,
    pub turns: usize,
    pub gat: GlobalAttributeTable,
    pub history: Vec<TurnSummary>,
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StateResponse>> {
    let session = app.sessions.snapshot(&id)?;
    Ok(Json(StateResponse {
        session_id: session.id.clone(),
        turns: session.history.len(),
        gat: session.gat.clone(),
        history: session
            .history
            .turns()
            .iter()
            .map(|t| TurnSummary {
                query: t.query.clone(),
                answer: t.answer.clone(),
                produced_assets: paths(&t.produced_assets),
            })
            .collect(),
    }))
}

async fn get_history(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    let session = app.sessions.snapshot(&id)?;
    Ok(Json((*session).clone()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    pub session_id: String,
    pub busy: bool,
    pub turns: usize,
}

async fn get_status(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StatusResponse>> {
    let status = app.sessions.status(&id)?;
    Ok(Json(StatusResponse {
        session_id: id,
        busy: status.busy,
        turns: status.turns,
    }))
}

/// Serves `music/<id>.wav`. Only names of the stored-asset form are looked
/// up, so no request can reach outside the store.
async fn get_asset(State(app): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let relative = format!("music/{file}");
    if AssetId::from_relative_path(&relative).is_none() {
        return Err(ApiError::bad_request(format!("not an asset name: {file:?}")));
    }
    let asset = app
        .engine
        .store()
        .resolve(&relative)
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()))?;
    let bytes = app
        .engine
        .store()
        .read_bytes(&asset)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut response = bytes.into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    Ok(response)
}
