use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use chrono::NaiveDate;
use regex::Regex;

use crate::context::UserContext;
use crate::msgmodel::MediaKind;
use crate::nlu::{MessageUnderstanding, ParamValue, Sentiment, FALLBACK_INTENT};

use super::plan::PlanOutcome;
use super::state::DialogState;

/// Everything a callback may look at.
pub struct TurnInput<'a> {
    pub context: &'a UserContext,
    pub understanding: &'a MessageUnderstanding,
    /// The state whose handler list matched, when dispatch came from one.
    pub state: Option<&'a DialogState>,
    /// Calendar day of the inbound message.
    pub today: NaiveDate,
}

pub type Callback = Arc<dyn Fn(&TurnInput<'_>) -> PlanOutcome + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamConstraint {
    pub name: String,
    /// `None` only requires presence.
    pub value: Option<String>,
}

#[derive(Debug, Clone)]
pub enum HandlerKind {
    /// Matches any of `intents` (any understood intent when empty) carrying
    /// every required parameter.
    Intent { intents: Vec<String>, required: Vec<ParamConstraint> },
    Affirmation(BTreeSet<String>),
    Negation(BTreeSet<String>),
    /// Case-sensitive unless the pattern says otherwise; applied to the raw text.
    Regex(Regex),
    Media(BTreeSet<MediaKind>),
    EmojiSentiment(Sentiment),
}

impl HandlerKind {
    pub fn intent<I, S>(intents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        HandlerKind::Intent {
            intents: intents.into_iter().map(Into::into).collect(),
            required: Vec::new(),
        }
    }

    pub fn any_intent() -> Self {
        HandlerKind::Intent {
            intents: Vec::new(),
            required: Vec::new(),
        }
    }

    pub fn requiring(self, param: impl Into<String>) -> Self {
        self.requiring_value(param, None)
    }

    pub fn requiring_value(self, param: impl Into<String>, value: Option<String>) -> Self {
        match self {
            HandlerKind::Intent { intents, mut required } => {
                required.push(ParamConstraint {
                    name: param.into(),
                    value,
                });
                HandlerKind::Intent { intents, required }
            }
            other => other,
        }
    }

    /// Consolidates the usual confirmation intents.
    pub fn affirmation() -> Self {
        HandlerKind::Affirmation(BTreeSet::from(["affirm".to_owned()]))
    }

    pub fn negation() -> Self {
        HandlerKind::Negation(BTreeSet::from(["deny".to_owned()]))
    }

    pub fn regex(pattern: &str) -> Result<Self, regex::Error> {
        Regex::new(pattern).map(HandlerKind::Regex)
    }

    pub fn media<I: IntoIterator<Item = MediaKind>>(kinds: I) -> Self {
        HandlerKind::Media(kinds.into_iter().collect())
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            HandlerKind::Intent { .. } => "intent",
            HandlerKind::Affirmation(_) => "affirmation",
            HandlerKind::Negation(_) => "negation",
            HandlerKind::Regex(_) => "regex",
            HandlerKind::Media(_) => "media",
            HandlerKind::EmojiSentiment(_) => "emoji_sentiment",
        }
    }

    /// Identity of the rule for duplicate detection.
    pub fn key(&self) -> String {
        match self {
            HandlerKind::Intent { intents, required } => {
                let mut intents = intents.clone();
                intents.sort();
                let mut required = required.clone();
                required.sort();
                let req: Vec<String> = required
                    .iter()
                    .map(|c| match &c.value {
                        Some(v) => format!("{}={v}", c.name),
                        None => c.name.clone(),
                    })
                    .collect();
                format!("intent[{}]({})", intents.join(","), req.join(","))
            }
            HandlerKind::Affirmation(set) => format!("affirmation[{}]", set.iter().cloned().collect::<Vec<_>>().join(",")),
            HandlerKind::Negation(set) => format!("negation[{}]", set.iter().cloned().collect::<Vec<_>>().join(",")),
            HandlerKind::Regex(re) => format!("regex({})", re.as_str()),
            HandlerKind::Media(kinds) => format!(
                "media[{}]",
                kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",")
            ),
            HandlerKind::EmojiSentiment(s) => format!("emoji({})", s.as_str()),
        }
    }

    pub fn matches(&self, u: &MessageUnderstanding) -> bool {
        match self {
            HandlerKind::Intent { intents, required } => {
                let intent_ok = if intents.is_empty() {
                    u.intent != FALLBACK_INTENT
                } else {
                    intents.iter().any(|i| *i == u.intent)
                };
                intent_ok
                    && required.iter().all(|c| match (u.parameters.get(&c.name), &c.value) {
                        (None, _) => false,
                        (Some(_), None) => true,
                        (Some(v), Some(expected)) => match v {
                            ParamValue::Text(s) => s == expected,
                            other => other.normalized() == *expected,
                        },
                    })
            }
            HandlerKind::Affirmation(set) | HandlerKind::Negation(set) => set.contains(&u.intent),
            HandlerKind::Regex(re) => re.is_match(&u.raw_text),
            HandlerKind::Media(kinds) => u.media_kind.is_some_and(|k| kinds.contains(&k)),
            HandlerKind::EmojiSentiment(s) => u.sentiment == *s,
        }
    }
}

/// One dispatch rule: a match predicate plus the callback that plans the
/// response. `targets` and `templates` declare which states the callback may
/// transition to and which templates it may use, so both can be checked at
/// registration time.
#[derive(Clone)]
pub struct Handler {
    pub id: String,
    pub kind: HandlerKind,
    pub exclude_intents: BTreeSet<String>,
    pub targets: BTreeSet<String>,
    pub templates: BTreeSet<String>,
    callback: Callback,
}

impl fmt::Debug for Handler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Handler")
            .field("id", &self.id)
            .field("kind", &self.kind.key())
            .field("exclude_intents", &self.exclude_intents)
            .field("targets", &self.targets)
            .finish_non_exhaustive()
    }
}

impl Handler {
    pub fn new<F>(id: impl Into<String>, kind: HandlerKind, callback: F) -> Self
    where
        F: Fn(&TurnInput<'_>) -> PlanOutcome + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            kind,
            exclude_intents: BTreeSet::new(),
            targets: BTreeSet::new(),
            templates: BTreeSet::new(),
            callback: Arc::new(callback),
        }
    }

    /// Never match these intents, whatever the kind says.
    pub fn except<I, S>(mut self, intents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.exclude_intents.extend(intents.into_iter().map(Into::into));
        self
    }

    pub fn targets<I, S>(mut self, states: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.targets.extend(states.into_iter().map(Into::into));
        self
    }

    pub fn templates<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.templates.extend(ids.into_iter().map(Into::into));
        self
    }

    pub fn matches(&self, u: &MessageUnderstanding) -> bool {
        !self.exclude_intents.contains(&u.intent) && self.kind.matches(u)
    }

    pub fn call(&self, input: &TurnInput<'_>) -> PlanOutcome {
        (self.callback)(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_with_constraints() {
        let kind = HandlerKind::intent(["phone_broken"]).requiring("damage_type");
        let u = MessageUnderstanding::with_intent("phone_broken");
        assert!(!kind.matches(&u));
        let u = u.param("damage_type", ParamValue::Text("display_damage".into()));
        assert!(kind.matches(&u));
        let exact = HandlerKind::intent(["phone_broken"]).requiring_value("damage_type", Some("theft".into()));
        assert!(!exact.matches(&u));
    }

    #[test]
    fn any_intent_skips_fallback() {
        let kind = HandlerKind::any_intent();
        assert!(kind.matches(&MessageUnderstanding::with_intent("greet")));
        assert!(!kind.matches(&MessageUnderstanding::fallback("x", Sentiment::Neutral)));
    }

    #[test]
    fn affirmation_and_negation() {
        assert!(HandlerKind::affirmation().matches(&MessageUnderstanding::with_intent("affirm")));
        assert!(!HandlerKind::affirmation().matches(&MessageUnderstanding::with_intent("deny")));
        assert!(HandlerKind::negation().matches(&MessageUnderstanding::with_intent("deny")));
    }

    #[test]
    fn media_and_emoji() {
        let mut u = MessageUnderstanding::with_intent("media");
        u.media_kind = Some(MediaKind::Image);
        assert!(HandlerKind::media([MediaKind::Image]).matches(&u));
        assert!(!HandlerKind::media([MediaKind::Audio]).matches(&u));
        u.sentiment = Sentiment::Negative;
        assert!(HandlerKind::EmojiSentiment(Sentiment::Negative).matches(&u));
    }

    #[test]
    fn exclusion_guard() {
        let h = Handler::new("any", HandlerKind::regex(".+").unwrap(), |_| PlanOutcome::silent()).except(["joke"]);
        let mut u = MessageUnderstanding::with_intent("joke");
        u.raw_text = "tell me a joke".into();
        assert!(!h.matches(&u));
        u.intent = "inform".into();
        assert!(h.matches(&u));
    }

    #[test]
    fn keys_ignore_order() {
        let a = HandlerKind::intent(["b", "a"]).requiring("x").requiring("y");
        let b = HandlerKind::intent(["a", "b"]).requiring("y").requiring("x");
        assert_eq!(a.key(), b.key());
    }
}
