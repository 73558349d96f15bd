//! HTTP endpoint for external channel connectors.
//!
//! `POST /v1/messages` takes one message in the unified JSON format and answers
//! with the bot's actions. Messages of one user are processed one at a time;
//! different users run in parallel.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use super::handle_message;
use crate::context::{ContextStore, StoreError};
use crate::engine::Engine;
use crate::msgmodel::{decode_message, ChatAction, UserKey};
use crate::respond::TemplateFile;

type Gate = Arc<tokio::sync::Mutex<()>>;

pub struct WebhookState {
    engine: Arc<Engine>,
    store: Arc<dyn ContextStore>,
    gates: Mutex<HashMap<UserKey, Gate>>,
    conflicts: AtomicU64,
    handled: AtomicU64,
}

impl WebhookState {
    pub fn new(engine: Arc<Engine>, store: Arc<dyn ContextStore>) -> Arc<Self> {
        Arc::new(Self {
            engine,
            store,
            gates: Mutex::new(HashMap::new()),
            conflicts: AtomicU64::new(0),
            handled: AtomicU64::new(0),
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn conflicts(&self) -> u64 {
        self.conflicts.load(Ordering::Relaxed)
    }

    pub fn handled(&self) -> u64 {
        self.handled.load(Ordering::Relaxed)
    }

    fn gate(&self, key: &UserKey) -> Gate {
        let mut gates = self.gates.lock().expect("gate map lock");
        // drop gates nobody is waiting on so the map stays small
        if gates.len() > 1024 {
            gates.retain(|_, g| Arc::strong_count(g) > 1);
        }
        gates.entry(key.clone()).or_default().clone()
    }
}

#[derive(Debug, Serialize)]
pub struct MessageResponse {
    pub channel_id: String,
    pub user_id: String,
    pub message_id: String,
    pub actions: Vec<ChatAction>,
}

fn error(status: StatusCode, message: &str, field: Option<&str>) -> Response {
    let body = match field {
        Some(f) => json!({ "error": message, "field": f }),
        None => json!({ "error": message }),
    };
    (status, Json(body)).into_response()
}

async fn post_message(State(state): State<Arc<WebhookState>>, body: Bytes) -> Response {
    let msg = match decode_message(&body) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, &e.to_string(), e.field()),
    };
    let gate = state.gate(&msg.key);
    let _turn = gate.lock().await;
    let worker = Arc::clone(&state);
    let msg_for_worker = msg.clone();
    let result = tokio::task::spawn_blocking(move || {
        handle_message(&worker.engine, worker.store.as_ref(), &msg_for_worker)
    })
    .await;
    match result {
        Ok(Ok(out)) => {
            state.handled.fetch_add(1, Ordering::Relaxed);
            Json(MessageResponse {
                channel_id: msg.key.channel_id,
                user_id: msg.key.user_id,
                message_id: msg.message_id,
                actions: out.actions,
            })
            .into_response()
        }
        Ok(Err(StoreError::VersionConflict { .. })) => {
            state.conflicts.fetch_add(1, Ordering::Relaxed);
            error(StatusCode::CONFLICT, "conversation was modified concurrently, retry", None)
        }
        Ok(Err(e)) => {
            tracing::error!(user = %msg.key, error = %e, "store failure");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error", None)
        }
        Err(e) => {
            tracing::error!(user = %msg.key, error = %e, "worker panicked");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error", None)
        }
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(state: Arc<WebhookState>) -> Router {
    Router::new()
        .route("/v1/messages", post(post_message))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: Arc<WebhookState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

/// Polls `file` and swaps the engine's templates when it changes. A broken
/// file is logged and the old templates stay in place.
pub fn spawn_template_reload(engine: Arc<Engine>, mut file: TemplateFile, every: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            match file.reload_if_changed() {
                Ok(None) => {}
                Ok(Some(table)) => match engine.replace_templates(table) {
                    Ok(()) => tracing::info!(path = %file.path().display(), "templates reloaded"),
                    Err(e) => tracing::warn!(path = %file.path().display(), error = %e, "rejected template reload"),
                },
                Err(e) => tracing::warn!(path = %file.path().display(), error = %e, "template file unreadable"),
            }
        }
    })
}
