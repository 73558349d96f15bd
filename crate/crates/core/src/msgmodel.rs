//! Channel-independent message format.
//!
//! Every adapter translates its native representation into [`InboundMessage`]
//! values and renders [`ChatAction`]s back out. The canonical wire form is a
//! JSON record with a fixed field order:
//!
//! ```json
//! {"channel_id":"console","user_id":"u1","message_id":"m1",
//!  "timestamp":"2018-06-10T09:00:00Z","payload":{"type":"text","value":"hi"}}
//! ```
//!
//! Media and voice payloads carry `{"kind": "image"|"audio"|"other", "uri": ...}`
//! as their value. Actions use the same layout with an `"action"` tag.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Identifies one conversation partner on one channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserKey {
    pub channel_id: String,
    pub user_id: String,
}

impl UserKey {
    pub fn new(channel_id: impl Into<String>, user_id: impl Into<String>) -> Result<Self, DecodeError> {
        let key = Self {
            channel_id: channel_id.into(),
            user_id: user_id.into(),
        };
        if key.channel_id.is_empty() {
            return Err(DecodeError::EmptyField("channel_id".into()));
        }
        if key.user_id.is_empty() {
            return Err(DecodeError::EmptyField("user_id".into()));
        }
        Ok(key)
    }
}

impl fmt::Display for UserKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.channel_id, self.user_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Audio,
    Other,
}

impl MediaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Image => "image",
            MediaKind::Audio => "audio",
            MediaKind::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "image" => Some(MediaKind::Image),
            "audio" => Some(MediaKind::Audio),
            "other" => Some(MediaKind::Other),
            _ => None,
        }
    }
}

/// Opaque reference to attached media; the content itself is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub kind: MediaKind,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Text(String),
    QuickReply(String),
    Media(MediaRef),
    Voice(MediaRef),
}

impl Payload {
    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::Text(_) => "text",
            Payload::QuickReply(_) => "quick_reply",
            Payload::Media(_) => "media",
            Payload::Voice(_) => "voice",
        }
    }

    fn to_value(&self) -> Value {
        let value = match self {
            Payload::Text(s) | Payload::QuickReply(s) => Value::String(s.clone()),
            Payload::Media(m) | Payload::Voice(m) => {
                let mut obj = Map::new();
                obj.insert("kind".into(), Value::String(m.kind.as_str().into()));
                obj.insert("uri".into(), Value::String(m.uri.clone()));
                Value::Object(obj)
            }
        };
        let mut obj = Map::new();
        obj.insert("type".into(), Value::String(self.type_name().into()));
        obj.insert("value".into(), value);
        Value::Object(obj)
    }

    fn validate(&self) -> Result<(), DecodeError> {
        match self {
            Payload::Text(s) if s.trim().is_empty() => Err(DecodeError::EmptyField("payload.value".into())),
            Payload::QuickReply(s) if s.is_empty() => Err(DecodeError::EmptyField("payload.value".into())),
            Payload::Media(m) | Payload::Voice(m) if m.uri.is_empty() => {
                Err(DecodeError::EmptyField("payload.value.uri".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Serialize for Payload {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        decode_payload(&value).map_err(serde::de::Error::custom)
    }
}

/// One user message in the unified format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundMessage {
    pub key: UserKey,
    pub message_id: String,
    /// UTC, whole seconds.
    pub timestamp: DateTime<Utc>,
    pub payload: Payload,
}

impl InboundMessage {
    pub fn new(key: UserKey, message_id: impl Into<String>, timestamp: DateTime<Utc>, payload: Payload) -> Result<Self, DecodeError> {
        let msg = Self {
            key,
            message_id: message_id.into(),
            timestamp: timestamp.trunc_subsecs(0),
            payload,
        };
        msg.validate()?;
        Ok(msg)
    }

    pub fn text(key: UserKey, message_id: impl Into<String>, timestamp: DateTime<Utc>, text: impl Into<String>) -> Result<Self, DecodeError> {
        Self::new(key, message_id, timestamp, Payload::Text(text.into()))
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.key.channel_id.is_empty() {
            return Err(DecodeError::EmptyField("channel_id".into()));
        }
        if self.key.user_id.is_empty() {
            return Err(DecodeError::EmptyField("user_id".into()));
        }
        if self.message_id.is_empty() {
            return Err(DecodeError::EmptyField("message_id".into()));
        }
        self.payload.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed record: {0}")]
    Syntax(String),
    #[error("missing field {0}")]
    MissingField(String),
    #[error("{0} empty")]
    EmptyField(String),
    #[error("ambiguous payload")]
    AmbiguousPayload,
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl DecodeError {
    /// The offending field, when the error is attributable to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            DecodeError::Syntax(_) => None,
            DecodeError::MissingField(f) | DecodeError::EmptyField(f) => Some(f),
            DecodeError::AmbiguousPayload => Some("payload"),
            DecodeError::Invalid { field, .. } => Some(field),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> DecodeError {
    DecodeError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Canonical serialization. Field order is fixed, so equal messages encode to
/// identical bytes.
pub fn encode_message(msg: &InboundMessage) -> Vec<u8> {
    // Serialized straight from a struct: going through `Value` would sort keys.
    #[derive(Serialize)]
    struct Wire<'a> {
        channel_id: &'a str,
        user_id: &'a str,
        message_id: &'a str,
        timestamp: String,
        payload: &'a Payload,
    }
    serde_json::to_vec(&Wire {
        channel_id: &msg.key.channel_id,
        user_id: &msg.key.user_id,
        message_id: &msg.message_id,
        timestamp: msg.timestamp.format(TIMESTAMP_FORMAT).to_string(),
        payload: &msg.payload,
    })
    .expect("wire record serializes")
}

pub fn decode_message(bytes: &[u8]) -> Result<InboundMessage, DecodeError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    decode_message_value(&value)
}

pub fn decode_message_value(value: &Value) -> Result<InboundMessage, DecodeError> {
    let obj = value.as_object().ok_or_else(|| DecodeError::Syntax("expected a JSON object".into()))?;
    let channel_id = required_str(obj, "channel_id")?;
    let user_id = required_str(obj, "user_id")?;
    let message_id = required_str(obj, "message_id")?;
    let ts = required_str(obj, "timestamp")?;
    let timestamp = parse_timestamp(ts)?;
    let payload = decode_payload(obj.get("payload").ok_or_else(|| DecodeError::MissingField("payload".into()))?)?;
    let key = UserKey::new(channel_id, user_id)?;
    InboundMessage::new(key, message_id, timestamp, payload)
}

fn required_str<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a str, DecodeError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(DecodeError::MissingField(field.into())),
        Some(Value::String(s)) if s.is_empty() => Err(DecodeError::EmptyField(field.into())),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(invalid(field, "expected a string")),
    }
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, DecodeError> {
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT) {
        return Ok(naive.and_utc());
    }
    DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.with_timezone(&Utc).trunc_subsecs(0))
        .map_err(|e| invalid("timestamp", e.to_string()))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

const PAYLOAD_VARIANTS: [&str; 4] = ["text", "quick_reply", "media", "voice"];

/// Accepts the canonical `{"type", "value"}` form and the shorthand
/// `{"text": "..."}` form that some messengers emit.
fn decode_payload(value: &Value) -> Result<Payload, DecodeError> {
    let obj = value
        .as_object()
        .ok_or_else(|| invalid("payload", "expected an object"))?;
    let shorthand: Vec<&str> = PAYLOAD_VARIANTS
        .iter()
        .copied()
        .filter(|k| obj.contains_key(*k))
        .collect();
    let (ty, inner) = match (obj.get("type"), shorthand.as_slice()) {
        (Some(_), [_, ..]) => return Err(DecodeError::AmbiguousPayload),
        (None, [_, _, ..]) => return Err(DecodeError::AmbiguousPayload),
        (None, []) => return Err(DecodeError::MissingField("payload.type".into())),
        (None, [variant]) => (*variant, &obj[*variant]),
        (Some(Value::String(ty)), []) => {
            let inner = obj
                .get("value")
                .ok_or_else(|| DecodeError::MissingField("payload.value".into()))?;
            (ty.as_str(), inner)
        }
        (Some(_), []) => return Err(invalid("payload.type", "expected a string")),
    };
    let payload = match ty {
        "text" => Payload::Text(payload_str(inner)?),
        "quick_reply" => Payload::QuickReply(payload_str(inner)?),
        "media" => Payload::Media(media_ref(inner)?),
        "voice" => Payload::Voice(media_ref(inner)?),
        other => return Err(invalid("payload.type", format!("unknown variant {other:?}"))),
    };
    payload.validate()?;
    Ok(payload)
}

fn payload_str(v: &Value) -> Result<String, DecodeError> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| invalid("payload.value", "expected a string"))
}

fn media_ref(v: &Value) -> Result<MediaRef, DecodeError> {
    let obj = v
        .as_object()
        .ok_or_else(|| invalid("payload.value", "expected an object"))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| DecodeError::MissingField("payload.value.kind".into()))?;
    let kind = MediaKind::parse(kind).ok_or_else(|| invalid("payload.value.kind", format!("unknown kind {kind:?}")))?;
    let uri = obj
        .get("uri")
        .and_then(Value::as_str)
        .ok_or_else(|| DecodeError::MissingField("payload.value.uri".into()))?;
    Ok(MediaRef { kind, uri: uri.to_owned() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    SendText,
    SendQuickReplies,
    SendTyping,
    RequestMedia,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::SendText => "send_text",
            ActionKind::SendQuickReplies => "send_quick_replies",
            ActionKind::SendTyping => "send_typing",
            ActionKind::RequestMedia => "request_media",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuickReplyOption {
    pub id: String,
    pub label: String,
}

impl QuickReplyOption {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("{0:?} requires text")]
    MissingText(ActionKind),
    #[error("quick replies need at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("duplicate option id {0:?}")]
    DuplicateOption(String),
    #[error("typing action carries no text")]
    TypingWithText,
}

/// One bot output. Construct through the typed constructors, which enforce
/// the per-kind invariants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatAction {
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<QuickReplyOption>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ChatAction {
    pub fn typing() -> Self {
        Self {
            action: ActionKind::SendTyping,
            text: None,
            options: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            action: ActionKind::SendText,
            text: Some(text.into()),
            options: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn quick_replies(prompt: impl Into<String>, options: Vec<QuickReplyOption>) -> Result<Self, ActionError> {
        let action = Self {
            action: ActionKind::SendQuickReplies,
            text: Some(prompt.into()),
            options: Some(options),
            metadata: BTreeMap::new(),
        };
        action.validate()?;
        Ok(action)
    }

    pub fn request_media(prompt: impl Into<String>) -> Self {
        Self {
            action: ActionKind::RequestMedia,
            text: Some(prompt.into()),
            options: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Template id recorded by the responder, if any.
    pub fn template(&self) -> Option<&str> {
        self.metadata.get("template").map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        match self.action {
            ActionKind::SendTyping => {
                if self.text.is_some() {
                    return Err(ActionError::TypingWithText);
                }
            }
            ActionKind::SendText | ActionKind::RequestMedia => {
                if self.text.is_none() {
                    return Err(ActionError::MissingText(self.action));
                }
            }
            ActionKind::SendQuickReplies => {
                if self.text.is_none() {
                    return Err(ActionError::MissingText(self.action));
                }
                let options = self.options.as_deref().unwrap_or_default();
                if options.len() < 2 {
                    return Err(ActionError::TooFewOptions(options.len()));
                }
                let mut seen = std::collections::BTreeSet::new();
                for opt in options {
                    if !seen.insert(opt.id.as_str()) {
                        return Err(ActionError::DuplicateOption(opt.id.clone()));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "direction", rename_all = "snake_case")]
pub enum TranscriptEntry {
    User { payload: Payload },
    Bot { action: ChatAction },
}

impl TranscriptEntry {
    pub fn direction(&self) -> Direction {
        match self {
            TranscriptEntry::User { .. } => Direction::User,
            TranscriptEntry::Bot { .. } => Direction::Bot,
        }
    }
}

/// Chronological record of one conversation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn push_user(&mut self, payload: Payload) {
        self.entries.push(TranscriptEntry::User { payload });
    }

    pub fn push_bot(&mut self, actions: impl IntoIterator<Item = ChatAction>) {
        self.entries
            .extend(actions.into_iter().map(|action| TranscriptEntry::Bot { action }));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(secs, 0).unwrap()
    }

    fn key() -> UserKey {
        UserKey::new("console", "u1").unwrap()
    }

    #[test]
    fn text_round_trip() {
        let msg = InboundMessage::text(key(), "m1", ts(1_528_621_200), "hi").unwrap();
        let bytes = encode_message(&msg);
        let s = std::str::from_utf8(&bytes).unwrap();
        assert_eq!(
            s,
            r#"{"channel_id":"console","user_id":"u1","message_id":"m1","timestamp":"2018-06-10T09:00:00Z","payload":{"type":"text","value":"hi"}}"#
        );
        assert_eq!(decode_message(&bytes).unwrap(), msg);
    }

    #[test]
    fn quick_reply_variant_preserved() {
        let msg = InboundMessage::new(key(), "m2", ts(0), Payload::QuickReply("phone_model_2".into())).unwrap();
        let v: Value = serde_json::from_slice(&encode_message(&msg)).unwrap();
        assert_eq!(v["payload"]["type"], "quick_reply");
        assert_eq!(decode_message(&encode_message(&msg)).unwrap(), msg);
    }

    #[test]
    fn encodings_differ_only_in_timestamp() {
        let a = InboundMessage::text(key(), "m1", ts(100), "hi").unwrap();
        let b = InboundMessage::text(key(), "m1", ts(200), "hi").unwrap();
        let va: Map<String, Value> = serde_json::from_slice(&encode_message(&a)).unwrap();
        let vb: Map<String, Value> = serde_json::from_slice(&encode_message(&b)).unwrap();
        let differing: Vec<_> = va.keys().filter(|k| va[*k] != vb[*k]).collect();
        assert_eq!(differing, vec!["timestamp"]);
    }

    #[test]
    fn empty_user_id_rejected() {
        let raw = br#"{"channel_id":"c","user_id":"","message_id":"m","timestamp":"2018-06-10T09:00:00Z","payload":{"type":"text","value":"hi"}}"#;
        let err = decode_message(raw).unwrap_err();
        assert_eq!(err.to_string(), "user_id empty");
        assert_eq!(err.field(), Some("user_id"));
    }

    #[test]
    fn missing_user_id_named() {
        let raw = br#"{"channel_id":"c","message_id":"m","timestamp":"2018-06-10T09:00:00Z","payload":{"type":"text","value":"hi"}}"#;
        assert_eq!(decode_message(raw).unwrap_err(), DecodeError::MissingField("user_id".into()));
    }

    #[test]
    fn both_text_and_quick_reply_is_ambiguous() {
        let raw = br#"{"channel_id":"c","user_id":"u","message_id":"m","timestamp":"2018-06-10T09:00:00Z","payload":{"text":"hi","quick_reply":"x"}}"#;
        let err = decode_message(raw).unwrap_err();
        assert_eq!(err.to_string(), "ambiguous payload");
    }

    #[test]
    fn shorthand_payload_accepted() {
        let raw = br#"{"channel_id":"c","user_id":"u","message_id":"m","timestamp":"2018-06-10T09:00:00Z","payload":{"text":"hi"}}"#;
        assert_eq!(decode_message(raw).unwrap().payload, Payload::Text("hi".into()));
    }

    #[test]
    fn whitespace_text_rejected() {
        let raw = br#"{"channel_id":"c","user_id":"u","message_id":"m","timestamp":"2018-06-10T09:00:00Z","payload":{"type":"text","value":"   "}}"#;
        assert!(matches!(decode_message(raw), Err(DecodeError::EmptyField(_))));
    }

    #[test]
    fn syntax_error_reported() {
        assert!(matches!(decode_message(b"{not json"), Err(DecodeError::Syntax(_))));
    }

    #[test]
    fn action_invariants() {
        assert_eq!(
            ChatAction::quick_replies("pick", vec![QuickReplyOption::new("a", "A")]),
            Err(ActionError::TooFewOptions(1))
        );
        assert_eq!(
            ChatAction::quick_replies("pick", vec![QuickReplyOption::new("a", "A"), QuickReplyOption::new("a", "B")]),
            Err(ActionError::DuplicateOption("a".into()))
        );
        let mut typing = ChatAction::typing();
        typing.text = Some("x".into());
        assert_eq!(typing.validate(), Err(ActionError::TypingWithText));
        let json = serde_json::to_string(&ChatAction::text("hello")).unwrap();
        assert_eq!(json, r#"{"action":"send_text","text":"hello"}"#);
    }

    fn payload_strategy() -> impl Strategy<Value = Payload> {
        let media = (prop_oneof![Just(MediaKind::Image), Just(MediaKind::Audio), Just(MediaKind::Other)], "[a-z0-9/:._-]{1,20}")
            .prop_map(|(kind, uri)| MediaRef { kind, uri });
        prop_oneof![
            "\\PC*[a-zA-Z0-9]\\PC*".prop_map(Payload::Text),
            "[a-z0-9_]{1,12}".prop_map(Payload::QuickReply),
            media.clone().prop_map(Payload::Media),
            media.prop_map(Payload::Voice),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_random_messages(
            channel in "[a-z]{1,8}",
            user in "\\PC{1,16}",
            mid in "[A-Za-z0-9-]{1,16}",
            secs in 0i64..4_000_000_000,
            payload in payload_strategy(),
        ) {
            let msg = InboundMessage::new(UserKey::new(channel, user).unwrap(), mid, ts(secs), payload).unwrap();
            let bytes = encode_message(&msg);
            prop_assert_eq!(decode_message(&bytes).unwrap(), msg.clone());
            prop_assert_eq!(encode_message(&msg.clone()), bytes);
        }
    }
}
