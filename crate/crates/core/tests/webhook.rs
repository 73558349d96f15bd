mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use claimchat_core::channels::webhook::{router, WebhookState};
use claimchat_core::claimbot::{ClaimBot, MemorySink};
use claimchat_core::msgmodel::{encode_message, InboundMessage};
use claimchat_core::nlu::Language;
use claimchat_core::{ContextStore, MemoryStore, StoreError, UserContext, UserKey};
use common::*;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn state_with(store: Arc<dyn ContextStore>) -> Arc<WebhookState> {
    let bot = ClaimBot::builtin(Language::En).unwrap();
    WebhookState::new(Arc::new(bot.engine(Arc::new(MemorySink::new()), 7)), store)
}

async fn post(state: &Arc<WebhookState>, body: impl Into<Body>) -> (StatusCode, Value) {
    let req = Request::post("/v1/messages")
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn web_msg(user: &str, n: usize, text: &str) -> Vec<u8> {
    let key = UserKey::new("web", user).unwrap();
    encode_message(&text_msg(&key, n, text))
}

#[tokio::test]
async fn health() {
    let state = state_with(Arc::new(MemoryStore::new()));
    let req = Request::get("/v1/health").body(Body::empty()).unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test]
async fn message_gets_actions() {
    let state = state_with(Arc::new(MemoryStore::new()));
    let (status, body) = post(&state, web_msg("u1", 0, "I want to report a claim")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["user_id"], "u1");
    assert_eq!(body["message_id"], "m0");
    let actions = body["actions"].as_array().unwrap();
    assert_eq!(actions[0]["action"], "send_typing");
    assert_eq!(actions.last().unwrap()["action"], "send_quick_replies");
    assert_eq!(state.handled(), 1);
}

#[tokio::test]
async fn bad_requests_name_the_field() {
    let state = state_with(Arc::new(MemoryStore::new()));
    let (status, body) = post(&state, "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body.get("field").is_none());

    let raw = r#"{"channel_id":"web","user_id":"","message_id":"m","timestamp":"2026-10-17T09:00:00Z","payload":{"type":"text","value":"hi"}}"#;
    let (status, body) = post(&state, raw).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "user_id");

    let raw = r#"{"channel_id":"web","user_id":"u","message_id":"m","timestamp":"yesterday","payload":{"type":"text","value":"hi"}}"#;
    let (status, body) = post(&state, raw).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "timestamp");
}

/// Store whose every save loses a race.
struct AlwaysStale;

impl ContextStore for AlwaysStale {
    fn load_or_create(&self, key: &UserKey) -> Result<UserContext, StoreError> {
        Ok(UserContext::new(key.clone()))
    }

    fn save(&self, ctx: &UserContext) -> Result<u64, StoreError> {
        Err(StoreError::VersionConflict {
            key: ctx.key.clone(),
            expected: ctx.version,
            found: ctx.version + 1,
        })
    }
}

struct Broken;

impl ContextStore for Broken {
    fn load_or_create(&self, _key: &UserKey) -> Result<UserContext, StoreError> {
        Err(StoreError::Unavailable("/var/lib/secret/path: disk on fire".into()))
    }

    fn save(&self, _ctx: &UserContext) -> Result<u64, StoreError> {
        unreachable!()
    }
}

#[tokio::test]
async fn conflict_is_409() {
    let state = state_with(Arc::new(AlwaysStale));
    let (status, _) = post(&state, web_msg("u", 0, "hi")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(state.conflicts(), 1);
}

#[tokio::test]
async fn store_failure_is_generic_500() {
    let state = state_with(Arc::new(Broken));
    let (status, body) = post(&state, web_msg("u", 0, "hi")).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(body, serde_json::json!({ "error": "internal error" }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn same_user_burst_is_serialized() {
    let store = Arc::new(MemoryStore::new());
    let state = state_with(store.clone());
    let mut tasks = Vec::new();
    for n in 0..20 {
        let state = Arc::clone(&state);
        tasks.push(tokio::spawn(async move { post(&state, web_msg("burst", n, "Tell me a joke")).await.0 }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(state.conflicts(), 0);
    let ctx = store.load_or_create(&UserKey::new("web", "burst").unwrap()).unwrap();
    assert_eq!(ctx.turn, 20);
    assert_eq!(ctx.version, 20);
}

#[tokio::test]
async fn hot_reload_swaps_templates() {
    use claimchat_core::channels::webhook::spawn_template_reload;
    use claimchat_core::respond::TemplateFile;
    use std::time::Duration;

    let bot = ClaimBot::builtin(Language::En).unwrap();
    let engine = Arc::new(bot.engine(Arc::new(MemorySink::new()), 7));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("templates.toml");
    let original = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/templates_en.toml")).unwrap();
    std::fs::write(&path, &original).unwrap();
    let (file, _) = TemplateFile::open(&path).unwrap();
    let task = spawn_template_reload(Arc::clone(&engine), file, Duration::from_millis(20));

    // broken edit is rejected, old texts stay
    std::thread::sleep(Duration::from_millis(30));
    std::fs::write(&path, "[thanks]\ntext = \"Cheers!\"\n").unwrap();
    tokio::time::sleep(Duration::from_millis(150)).await;
    assert!(engine.templates().contains("greeting"));

    std::fs::write(&path, original.replace("You're welcome!", "Any time!")).unwrap();
    let mut reloaded = false;
    for _ in 0..50 {
        tokio::time::sleep(Duration::from_millis(20)).await;
        let user = key("reload");
        let msg: InboundMessage = text_msg(&user, 0, "thanks");
        let out = engine.step(UserContext::new(user), &msg);
        if out.actions.last().unwrap().text.as_deref() == Some("Any time!") {
            reloaded = true;
            break;
        }
    }
    task.abort();
    assert!(reloaded);
}
