//! Routes and handlers.

#![allow(clippy::result_large_err)]

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::Utc;
use futures::{SinkExt, StreamExt};
use layerloom_collab::{CollabError, ModelRecord, StoreError};
use layerloom_core::frontends::{import, FrontendError};
use layerloom_core::ir::{total_parameters, validate, Framework, IrModel, Severity, ShapeMap};
use layerloom_core::layout::layout_model;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::fetch::{fetch_text, FetchError};
use crate::jobs::{ExportRequest, JobState};
use crate::App;

type AppState = State<Arc<App>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    extra: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), extra: Value::Null }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        if self.extra.is_null() {
            self.extra = json!({});
        }
        self.extra[key] = value;
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Value::Object(extra) = self.extra {
            error.as_object_mut().unwrap().extend(extra);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<CollabError> for ApiError {
    fn from(e: CollabError) -> Self {
        let status = match e.code() {
            "NotFound" => StatusCode::NOT_FOUND,
            "StoreError" => StatusCode::INTERNAL_SERVER_ERROR,
            "VersionOutOfRange" => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", e.to_string())
    }
}

fn frontend_error(e: &FrontendError) -> ApiError {
    let mut err = ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string());
    if let Some(span) = e.span() {
        err = err.with("span", serde_json::to_value(span).unwrap());
    }
    if let Some(layer) = e.layer_id() {
        err = err.with("layer_id", json!(layer));
    }
    err
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
}

pub fn router(app: Arc<App>) -> Router {
    // Leave room for JSON escaping around a source at the size limit;
    // the limit itself is checked on the decoded text.
    let body_limit = (app.config.fetch_limit as usize).saturating_mul(2).saturating_add(64 * 1024);
    Router::new()
        .route("/api/models", post(import_model))
        .route("/api/models/{id}", get(get_model))
        .route("/api/models/{id}/export", post(export_model))
        .route("/api/models/{id}/share", post(share_model))
        .route("/api/models/{id}/history", get(model_history))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/result", get(job_result))
        .route("/s/{token}", get(resolve_share))
        .route("/ws/models/{id}", get(ws_session))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(app)
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum Source {
    Text(String),
    Url(String),
}

#[derive(Deserialize)]
struct ImportBody {
    format: Framework,
    source: Source,
}

fn parameter_count(model: &IrModel) -> Option<u64> {
    total_parameters(model, &ShapeMap::new()).ok()
}

fn new_model_id() -> String {
    format!("{:016x}", rand::random::<u64>())
}

fn new_token() -> String {
    URL_SAFE_NO_PAD.encode(rand::random::<[u8; 16]>())
}

async fn import_model(State(app): AppState, body: Bytes) -> Result<Response, ApiError> {
    let request: ImportBody = parse_body(&body)?;
    let limit = app.config.fetch_limit;
    let text = match request.source {
        Source::Text(t) if t.len() as u64 > limit => {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "TooLarge",
                format!("source exceeds {limit} bytes"),
            ))
        }
        Source::Text(t) => t,
        Source::Url(url) => {
            let timeout = app.config.fetch_timeout;
            blocking(move || fetch_text(&url, limit, timeout)).await?.map_err(|e| match e {
                FetchError::BadUrl(_) => ApiError::bad_request(e.to_string()),
                FetchError::TooLarge(_) => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "TooLarge", e.to_string()),
                FetchError::Unreachable { .. } => ApiError::new(StatusCode::BAD_GATEWAY, "Unreachable", e.to_string()),
            })?
        }
    };
    let format = request.format;
    let app2 = app.clone();
    let body = blocking(move || -> Result<Value, ApiError> {
        let imported = import(&text, format).map_err(|e| frontend_error(&e))?;
        let mut diagnostics = imported.warnings;
        diagnostics.extend(validate(&imported.model));
        if diagnostics.iter().any(|d| d.severity == Severity::Error) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "InvalidModel", "the model failed validation")
                .with("diagnostics", serde_json::to_value(&diagnostics).unwrap()));
        }
        let model_id = new_model_id();
        let record = ModelRecord { model_id: model_id.clone(), source: Some(format), created_at: Utc::now() };
        let layout = layout_model(&imported.model, &app2.layout);
        let parameters = parameter_count(&imported.model);
        app2.hub.create(record, imported.model)?;
        Ok(json!({
            "model_id": model_id,
            "version": 0,
            "diagnostics": diagnostics,
            "layout": layout,
            "parameter_count": parameters,
        }))
    })
    .await??;
    Ok(Json(body).into_response())
}

async fn get_model(State(app): AppState, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let body = blocking(move || -> Result<Value, ApiError> {
        let record = app.hub.record(&id)?;
        let (model, version) = app.hub.snapshot(&id)?;
        let layout = layout_model(&model, &app.layout);
        Ok(json!({
            "model_id": id,
            "source": record.source,
            "created_at": record.created_at,
            "version": version,
            "model": model.to_json_value(),
            "layout": layout,
            "diagnostics": validate(&model),
            "parameter_count": parameter_count(&model),
        }))
    })
    .await??;
    Ok(Json(body))
}

#[derive(Deserialize)]
struct ExportBody {
    target: Framework,
    #[serde(default)]
    custom_layers: bool,
}

/// Queues an export of the current version and returns at once.
async fn export_model(State(app): AppState, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let request: ExportBody = parse_body(&body)?;
    let version = app.hub.version(&id)?;
    let job = app.jobs.submit(ExportRequest {
        model_id: id,
        version,
        target: request.target,
        custom_layers: request.custom_layers,
    });
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn job_status(State(app): AppState, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = app.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("job '{id}'")))?;
    Ok(Json(job).into_response())
}

async fn job_result(State(app): AppState, Path(id): Path<String>) -> Result<Response, ApiError> {
    let job = app.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("job '{id}'")))?;
    match (&job.state, &job.result) {
        (JobState::Done, Some(text)) => {
            let content_type = match job.target {
                Framework::Caffe => "text/plain; charset=utf-8",
                Framework::Keras => "application/json",
            };
            let disposition = format!("attachment; filename=\"{}\"", job.file_name);
            Ok((
                [(header::CONTENT_TYPE, content_type.to_string()), (header::CONTENT_DISPOSITION, disposition)],
                text.to_string(),
            )
                .into_response())
        }
        _ => {
            let mut err = ApiError::new(
                StatusCode::CONFLICT,
                "JobNotDone",
                format!("job '{id}' is {:?}", job.state).to_lowercase(),
            )
            .with("state", serde_json::to_value(job.state).unwrap());
            if let Some(e) = &job.error {
                err = err.with("detail", serde_json::to_value(e).unwrap());
            }
            Err(err)
        }
    }
}

async fn share_model(State(app): AppState, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    app.hub.version(&id)?;
    let store = app.hub.store().clone();
    let token = blocking(move || -> Result<String, ApiError> {
        loop {
            match store.put_share(&id, &new_token()) {
                Err(StoreError::Exists(_)) => continue,
                other => return Ok(other?),
            }
        }
    })
    .await??;
    Ok(Json(json!({ "token": token, "url": format!("/s/{token}") })))
}

async fn resolve_share(State(app): AppState, Path(token): Path<String>) -> Result<Json<Value>, ApiError> {
    let model_id = app.hub.store().resolve_share(&token)?.ok_or_else(|| ApiError::not_found("unknown share link"))?;
    Ok(Json(json!({
        "model_id": model_id,
        "token": token,
        "model_url": format!("/api/models/{model_id}"),
        "ws_url": format!("/ws/models/{model_id}?token={token}"),
    })))
}

async fn model_history(State(app): AppState, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(serde_json::to_value(app.hub.history(&id)?).unwrap()))
}

#[derive(Deserialize)]
struct SessionQuery {
    token: String,
    #[serde(default)]
    user: Option<String>,
}

async fn ws_session(
    State(app): AppState,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    match app.hub.store().resolve_share(&q.token)? {
        Some(model) if model == id => {}
        _ => return Err(ApiError::new(StatusCode::FORBIDDEN, "Forbidden", "share token does not grant this model")),
    }
    app.hub.version(&id)?;
    let user = q.user.filter(|u| !u.trim().is_empty()).unwrap_or_else(|| "anonymous".to_string());
    Ok(ws.on_upgrade(move |socket| run_session(socket, app, id, user)))
}

async fn run_session(socket: WebSocket, app: Arc<App>, model_id: String, user: String) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    let joined = app.hub.join(&model_id, &user, Box::new(move |m| tx.send(m).is_ok()));
    let Ok(session) = joined else { return };
    let writer = tokio::spawn(async move {
        while let Some(message) = rx.recv().await {
            let text = serde_json::to_string(&message).expect("message serializes");
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        match frame {
            Message::Text(text) => {
                let (hub, id) = (app.hub.clone(), model_id.clone());
                let text = text.to_string();
                if tokio::task::spawn_blocking(move || hub.handle_text(&id, session, &text)).await.is_err() {
                    break;
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    app.hub.leave(&model_id, session);
    writer.abort();
}
