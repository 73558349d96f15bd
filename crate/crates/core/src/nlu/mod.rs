//! Offline, deterministic message understanding.
//!
//! A [`Catalog`] of intents and entities is loaded from a TOML file and turns
//! each user text into a [`MessageUnderstanding`]: the winning intent, its
//! confidence and the entity parameters that intent may carry. Anything that
//! scores below the catalog threshold becomes the `fallback` intent.

mod catalog;
pub mod date;
pub mod emoji;
pub mod imei;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msgmodel::MediaKind;

pub use catalog::{Catalog, EntityKind, EntitySpec, IntentSpec, Language, PatternSpec};
pub use date::{extract_date, DateError};
pub use emoji::{emoji_sentiment, EmojiLexicon, Sentiment};
pub use imei::{luhn_check_digit, luhn_valid, validate_imei};

/// The designated non-understanding intent.
pub const FALLBACK_INTENT: &str = "fallback";
/// Built-in intent for quick-reply selections that do not name an intent.
pub const QUICK_REPLY_INTENT: &str = "quick_reply";
/// Built-in intent for media and (untranscribed) voice payloads.
pub const MEDIA_INTENT: &str = "media";
/// Parameter carrying the selected option id of a quick reply.
pub const OPTION_PARAM: &str = "option";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ParamValue {
    Text(String),
    Date(NaiveDate),
}

impl ParamValue {
    /// Normalized string form used for slot storage.
    pub fn normalized(&self) -> String {
        match self {
            ParamValue::Text(s) => s.clone(),
            ParamValue::Date(d) => d.format("%Y-%m-%d").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageUnderstanding {
    pub intent: String,
    pub confidence: f64,
    pub parameters: BTreeMap<String, ParamValue>,
    pub raw_text: String,
    pub media_kind: Option<MediaKind>,
    pub sentiment: Sentiment,
}

impl MessageUnderstanding {
    pub fn fallback(raw_text: impl Into<String>, sentiment: Sentiment) -> Self {
        Self {
            intent: FALLBACK_INTENT.into(),
            confidence: 0.0,
            parameters: BTreeMap::new(),
            raw_text: raw_text.into(),
            media_kind: None,
            sentiment,
        }
    }

    /// Understanding with a fixed intent and full confidence; handy for
    /// constructed inputs.
    pub fn with_intent(intent: impl Into<String>) -> Self {
        Self {
            intent: intent.into(),
            confidence: 1.0,
            parameters: BTreeMap::new(),
            raw_text: String::new(),
            media_kind: None,
            sentiment: Sentiment::Neutral,
        }
    }

    pub fn param(mut self, name: impl Into<String>, value: ParamValue) -> Self {
        self.parameters.insert(name.into(), value);
        self
    }

    pub fn is_fallback(&self) -> bool {
        self.intent == FALLBACK_INTENT
    }

    pub fn text_param(&self, name: &str) -> Option<&str> {
        match self.parameters.get(name) {
            Some(ParamValue::Text(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

/// Anything that can turn user input into a [`MessageUnderstanding`]. The
/// built-in [`Catalog`] is one implementation; an adapter for a hosted NLU
/// service would be another.
pub trait Understander: Send + Sync {
    fn understand(&self, text: &str, reference_date: NaiveDate) -> MessageUnderstanding;

    fn is_intent(&self, name: &str) -> bool;

    /// A quick-reply option id that names a known intent is treated as that
    /// intent; anything else is a `quick_reply` carrying the option.
    fn understand_option(&self, option_id: &str) -> MessageUnderstanding {
        if self.is_intent(option_id) && option_id != FALLBACK_INTENT {
            let mut u = MessageUnderstanding::with_intent(option_id);
            u.raw_text = option_id.to_owned();
            u
        } else {
            let mut u = MessageUnderstanding::with_intent(QUICK_REPLY_INTENT)
                .param(OPTION_PARAM, ParamValue::Text(option_id.to_owned()));
            u.raw_text = option_id.to_owned();
            u
        }
    }

    fn understand_media(&self, kind: MediaKind) -> MessageUnderstanding {
        let mut u = MessageUnderstanding::with_intent(MEDIA_INTENT);
        u.media_kind = Some(kind);
        u
    }
}
