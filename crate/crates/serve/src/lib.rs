//! Operator interface for a live rollout.
//!
//! `GET /state` returns the current snapshot, `/ws/state` streams every new
//! snapshot as JSON, `POST /feedback` answers a pending expert query with
//! feature-grammar text and `POST /control` pauses, resumes or single-steps
//! the rollout. Feedback is parsed here before it reaches the rollout, so a
//! malformed answer is rejected with diagnostics and the query stays pending.

use std::future::Future;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use aba_core::correspondence::{decode_description, CorrespondenceError};
use aba_core::model::LabelRegistry;
use aba_core::runtime::live::{Control, LiveError, LiveSession, Snapshot};
use aba_core::runtime::{run_rollout, Components, InterventionConfig, RolloutRecord, RolloutSpec};
use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

/// How long a stream waits for a change before checking the socket again.
const POLL: Duration = Duration::from_millis(200);

#[derive(Clone)]
pub struct AppState {
    pub session: Arc<LiveSession>,
    /// Labels the feedback parser resolves names against.
    pub registry: Arc<LabelRegistry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRequest {
    pub action: Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: bool,
    /// Number of features the text decoded to.
    pub features: usize,
}

/// Body of every 4xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub error: String,
    pub message: String,
    /// Character offset of a parse error in the submitted text.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

impl Rejection {
    fn new(error: &str, message: impl Into<String>) -> Rejection {
        Rejection {
            error: error.to_string(),
            message: message.into(),
            position: None,
        }
    }

    fn respond(self, status: StatusCode) -> Response {
        (status, Json(self)).into_response()
    }
}

fn grammar_rejection(e: CorrespondenceError) -> Rejection {
    let position = match &e {
        CorrespondenceError::Parse { position, .. }
        | CorrespondenceError::Resolve { position, .. } => Some(*position),
        _ => None,
    };
    Rejection {
        error: "invalid-feedback".into(),
        message: e.to_string(),
        position,
    }
}

fn live_rejection(e: LiveError) -> Response {
    let (status, code) = match e {
        LiveError::NoPendingQuery => (StatusCode::CONFLICT, "no-pending-query"),
        LiveError::Finished => (StatusCode::CONFLICT, "finished"),
        LiveError::EmptyFeedback => (StatusCode::UNPROCESSABLE_ENTITY, "invalid-feedback"),
    };
    Rejection::new(code, e.to_string()).respond(status)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/ws/state", get(ws_state))
        .route("/feedback", post(post_feedback))
        .route("/control", post(post_control))
        .with_state(state)
}

async fn get_state(State(state): State<AppState>) -> Json<Snapshot> {
    Json(state.session.snapshot())
}

async fn post_feedback(
    State(state): State<AppState>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return Rejection::new("bad-request", e.body_text()).respond(e.status()),
    };
    if state.session.snapshot().pending_query.is_none() {
        return live_rejection(LiveError::NoPendingQuery);
    }
    let desc = match decode_description(&req.text, &state.registry) {
        Ok(d) => d,
        Err(e) => return grammar_rejection(e).respond(StatusCode::UNPROCESSABLE_ENTITY),
    };
    match state.session.submit_feedback(&req.text) {
        Ok(()) => (
            StatusCode::ACCEPTED,
            Json(Accepted {
                accepted: true,
                features: desc.len(),
            }),
        )
            .into_response(),
        Err(e) => live_rejection(e),
    }
}

async fn post_control(
    State(state): State<AppState>,
    body: Result<Json<ControlRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return Rejection::new("bad-request", e.body_text()).respond(e.status()),
    };
    match state.session.control(req.action) {
        Ok(s) => Json(s).into_response(),
        Err(e) => live_rejection(e),
    }
}

async fn ws_state(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| stream_snapshots(socket, state.session))
}

/// Sends the current snapshot, then each newer one, until the client goes
/// away.
async fn stream_snapshots(mut socket: WebSocket, session: Arc<LiveSession>) {
    let mut seen = None;
    loop {
        let s = Arc::clone(&session);
        let after = seen.unwrap_or(0);
        let first = seen.is_none();
        let wait = tokio::task::spawn_blocking(move || {
            if first {
                s.snapshot()
            } else {
                s.wait_for_change(after, POLL)
            }
        });
        tokio::select! {
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
            snap = wait => {
                let Ok(snap) = snap else { return };
                if first || snap.seq > after {
                    seen = Some(snap.seq);
                    let text = serde_json::to_string(&snap).expect("snapshot serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

/// Runs one rollout on its own thread, mirrored into `session` and answered
/// by whoever posts feedback. The record is also published to the session.
pub fn spawn_rollout(
    comp: Arc<Components>,
    spec: RolloutSpec,
    cfg: InterventionConfig,
    session: Arc<LiveSession>,
    expert_timeout: Duration,
) -> JoinHandle<Option<RolloutRecord>> {
    std::thread::spawn(move || {
        let mut expert = session.expert(expert_timeout);
        let mut monitor = session.monitor();
        match run_rollout(&comp, &spec, &cfg, &mut expert, &mut monitor) {
            Ok(record) => {
                session.finish(&record);
                Some(record)
            }
            Err(e) => {
                session.fail(&e.to_string());
                None
            }
        }
    })
}
