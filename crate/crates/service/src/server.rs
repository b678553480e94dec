//! HTTP and WebSocket front end over [`Session`]s.
//!
//! Each session has one command lock, so mutations apply strictly in arrival
//! order. Rendering runs on the blocking pool while holding that lock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use conductor_core::session::{Command, DatasetSource, Event, Session, SessionExport};
use conductor_core::Error as CoreError;
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, Mutex, RwLock};

/// Message pushed to stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub event: String,
    pub epoch: u64,
    pub payload: Value,
}

#[derive(Debug, Clone)]
enum Outgoing {
    Json(Envelope),
    /// Envelope followed by the PNG bytes as a binary message.
    Frame(Envelope, Arc<Vec<u8>>),
}

struct SessionHandle {
    session: Arc<Mutex<Session>>,
    events: broadcast::Sender<Outgoing>,
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<u64, Arc<SessionHandle>>>,
    next_id: AtomicU64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    dataset: Option<DatasetSource>,
    import: Option<SessionExport>,
}

pub fn router() -> Router {
    router_with_state(Arc::new(AppState::default()))
}

pub fn router_with_state(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/command", post(command))
        .route("/session/{id}/state", get(session_state))
        .route("/session/{id}/export", get(export))
        .route("/session/{id}/frame.png", get(frame_png))
        .route("/session/{id}/stream", get(stream))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::NoDataset => StatusCode::CONFLICT,
            CoreError::Io { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

async fn handle(state: &AppState, id: u64) -> Result<Arc<SessionHandle>, ApiError> {
    state
        .sessions
        .read()
        .await
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no session {id}")))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?
    };
    let session = tokio::task::spawn_blocking(move || -> Result<Session, CoreError> {
        let mut s = match req.import {
            Some(export) => Session::import(export)?,
            None => Session::new(),
        };
        if let Some(source) = req.dataset {
            s.apply(Command::LoadDataset { source })?;
        }
        Ok(s)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let view = serde_json::to_value(session.state()).unwrap_or(Value::Null);
    let id = state.next_id.fetch_add(1, Ordering::Relaxed) + 1;
    let (tx, _) = broadcast::channel(64);
    state.sessions.write().await.insert(
        id,
        Arc::new(SessionHandle {
            session: Arc::new(Mutex::new(session)),
            events: tx,
        }),
    );
    Ok(Json(json!({ "id": id, "state": view })))
}

/// Runs `command` on the blocking pool, broadcasts the resulting events and
/// returns them as JSON envelopes together with any PNG produced.
async fn run_command(
    h: &SessionHandle,
    command: Command,
) -> Result<(Vec<Envelope>, Option<Arc<Vec<u8>>>), CoreError> {
    let session = h.session.clone();
    let result = tokio::task::spawn_blocking(move || {
        let mut s = session.blocking_lock();
        let events = s.apply(command)?;
        let mut out = Vec::new();
        let mut png = None;
        for ev in events {
            match ev {
                Event::Updated { epoch, cascade } => out.push((
                    Envelope {
                        event: "updated".into(),
                        epoch,
                        payload: json!({ "cascade": cascade }),
                    },
                    None,
                )),
                Event::Report(r) => out.push((
                    Envelope {
                        event: "report".into(),
                        epoch: r.epoch,
                        payload: serde_json::to_value(&r).unwrap_or(Value::Null),
                    },
                    None,
                )),
                Event::Frame(f) => {
                    let bytes = Arc::new(f.to_png()?);
                    png = Some(bytes.clone());
                    out.push((
                        Envelope {
                            event: "frame".into(),
                            epoch: f.id.epoch,
                            payload: json!({
                                "width": f.width,
                                "height": f.height,
                                "camera_hash": f.id.camera_hash,
                                "png_bytes": bytes.len(),
                            }),
                        },
                        Some(bytes),
                    ))
                }
            }
        }
        Ok::<_, CoreError>((out, png))
    })
    .await
    .map_err(|e| CoreError::Image(format!("worker failed: {e}")))?;
    let (out, png) = match result {
        Ok(v) => v,
        Err(e) => {
            let epoch = h.session.lock().await.epoch();
            let _ = h.events.send(Outgoing::Json(Envelope {
                event: "error".into(),
                epoch,
                payload: json!({ "message": e.to_string() }),
            }));
            return Err(e);
        }
    };
    let mut envelopes = Vec::with_capacity(out.len());
    for (env, bytes) in out {
        let msg = match bytes {
            Some(b) => Outgoing::Frame(env.clone(), b),
            None => Outgoing::Json(env.clone()),
        };
        let _ = h.events.send(msg);
        envelopes.push(env);
    }
    Ok((envelopes, png))
}

async fn command(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let h = handle(&state, id).await?;
    let cmd: Command = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
    let (events, _) = run_command(&h, cmd).await?;
    let epoch = h.session.lock().await.epoch();
    Ok(Json(json!({ "epoch": epoch, "events": events })))
}

async fn session_state(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Json<Value>, ApiError> {
    let h = handle(&state, id).await?;
    let s = h.session.lock().await;
    Ok(Json(serde_json::to_value(s.state()).unwrap_or(Value::Null)))
}

async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Json<SessionExport>, ApiError> {
    let h = handle(&state, id).await?;
    let s = h.session.lock().await;
    Ok(Json(s.export()))
}

async fn frame_png(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Response, ApiError> {
    let h = handle(&state, id).await?;
    let (events, png) = run_command(&h, Command::RequestFrame).await?;
    let png = png.ok_or_else(|| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "no frame".into()))?;
    let epoch = events.first().map_or(0, |e| e.epoch);
    let mut res = (*png).clone().into_response();
    let headers = res.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert("x-conductor-epoch", HeaderValue::from(epoch));
    Ok(res)
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let h = handle(&state, id).await?;
    Ok(ws.on_upgrade(move |socket| client_loop(socket, h)))
}

/// Forwards broadcast events to the client and applies commands it sends as
/// text messages.
async fn client_loop(socket: WebSocket, h: Arc<SessionHandle>) {
    let (mut tx, mut rx) = socket.split();
    let mut events = h.events.subscribe();
    let forward = tokio::spawn(async move {
        loop {
            let msg = match events.recv().await {
                Ok(m) => m,
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            };
            let sent = match msg {
                Outgoing::Json(env) => tx.send(text(&env)).await,
                Outgoing::Frame(env, png) => match tx.send(text(&env)).await {
                    Ok(()) => tx.send(Message::Binary(Bytes::from((*png).clone()))).await,
                    Err(e) => Err(e),
                },
            };
            if sent.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = rx.next().await {
        let Message::Text(body) = msg else {
            if matches!(msg, Message::Close(_)) {
                break;
            }
            continue;
        };
        match serde_json::from_str::<Command>(body.as_str()) {
            // errors are broadcast by run_command
            Ok(cmd) => {
                let _ = run_command(&h, cmd).await;
            }
            Err(e) => {
                let epoch = h.session.lock().await.epoch();
                let _ = h.events.send(Outgoing::Json(Envelope {
                    event: "error".into(),
                    epoch,
                    payload: json!({ "message": e.to_string() }),
                }));
            }
        }
    }
    forward.abort();
}

fn text(env: &Envelope) -> Message {
    Message::Text(serde_json::to_string(env).unwrap_or_default().into())
}
