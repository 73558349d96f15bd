//! Intent and entity catalog, its file format and the scoring rule.
//!
//! ```toml
//! language = "en"
//! threshold = 0.5
//!
//! [[intent]]
//! name = "affirm"
//! entities = []
//! [[intent.pattern]]
//! keywords = ["yes", "ok"]      # any keyword, whole-word, case-insensitive
//! [[intent.pattern]]
//! regex = "that('s| is) right"  # case-insensitive regex
//! weight = 2.0
//! [[intent.pattern]]
//! entities = ["damage_type"]    # matches when any listed entity is found
//!
//! [[entity]]
//! name = "damage_type"
//! kind = "enumerated"           # enumerated | date | digit_string | free_text
//! [entity.values]
//! display_damage = ["display", "screen"]
//! ```
//!
//! Each intent scores `matched weight / total weight`. Intents at or above the
//! threshold compete; the highest confidence wins, then the larger matched
//! weight, then the lexicographically smallest name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::date::extract_date;
use super::emoji::EmojiLexicon;
use super::{
    CatalogError, MessageUnderstanding, ParamValue, Understander, FALLBACK_INTENT, MEDIA_INTENT, OPTION_PARAM,
    QUICK_REPLY_INTENT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    De,
    En,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::De => "de",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "de" => Ok(Language::De),
            "en" => Ok(Language::En),
            other => Err(format!("unknown language {other:?}, expected de or en")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Enumerated,
    Date,
    DigitString,
    FreeText,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub name: String,
    pub kind: EntityKind,
    /// Canonical value to synonyms, for enumerated entities.
    #[serde(default)]
    pub values: BTreeMap<String, Vec<String>>,
    /// Digit count bounds for digit strings (inclusive).
    #[serde(default)]
    pub min_len: Option<usize>,
    #[serde(default)]
    pub max_len: Option<usize>,
    /// For free text: a regex whose first group is the value. Without it the
    /// whole trimmed message is the value.
    #[serde(default)]
    pub capture: Option<String>,
}

impl EntitySpec {
    pub fn enumerated(name: impl Into<String>, values: BTreeMap<String, Vec<String>>) -> Self {
        Self {
            name: name.into(),
            kind: EntityKind::Enumerated,
            values,
            min_len: None,
            max_len: None,
            capture: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub regex: Option<String>,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    pub name: String,
    #[serde(rename = "pattern", default)]
    pub patterns: Vec<PatternSpec>,
    #[serde(default)]
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    language: Language,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(rename = "intent", default)]
    intents: Vec<IntentSpec>,
    #[serde(rename = "entity", default)]
    entities: Vec<EntitySpec>,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone)]
enum Matcher {
    Regex(Regex),
    Entities(Vec<String>),
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    matcher: Matcher,
    weight: f64,
}

#[derive(Debug, Clone)]
struct CompiledIntent {
    spec: IntentSpec,
    patterns: Vec<CompiledPattern>,
    total_weight: f64,
}

#[derive(Debug, Clone)]
enum EntityMatcher {
    /// (synonym regex, synonym length, canonical value)
    Enumerated(Vec<(Regex, usize, String)>),
    Date,
    DigitString { min: usize, max: usize },
    FreeText(Option<Regex>),
}

#[derive(Debug, Clone)]
struct CompiledEntity {
    spec: EntitySpec,
    matcher: EntityMatcher,
}

/// Immutable, validated catalog. Cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Catalog {
    language: Language,
    threshold: f64,
    intents: Vec<CompiledIntent>,
    entities: BTreeMap<String, CompiledEntity>,
    lexicon: EmojiLexicon,
}

static DIGIT_RUN: std::sync::LazyLock<Regex> =
    std::sync::LazyLock::new(|| Regex::new(r"\+?\d{2,}(?:[ \-/]\d{2,})*|\d").unwrap());

fn keyword_regex(keywords: &[String]) -> Result<Regex, regex::Error> {
    let alternatives: Vec<String> = keywords.iter().map(|k| regex::escape(k.trim())).collect();
    Regex::new(&format!(r"(?i)\b(?:{})\b", alternatives.join("|")))
}

fn ci_regex(pattern: &str) -> Result<Regex, regex::Error> {
    Regex::new(&format!("(?i){pattern}"))
}

impl Catalog {
    pub fn from_toml(src: &str) -> Result<Self, CatalogError> {
        Self::from_toml_with(src, Vec::new())
    }

    /// Parses a catalog file and adds (or replaces) entities supplied by the
    /// caller, e.g. a phone-model entity generated from a device list.
    pub fn from_toml_with(src: &str, extra_entities: Vec<EntitySpec>) -> Result<Self, CatalogError> {
        let file: CatalogFile = toml::from_str(src).map_err(|e| CatalogError::Parse(e.to_string()))?;
        let mut entities = file.entities;
        for extra in extra_entities {
            entities.retain(|e| e.name != extra.name);
            entities.push(extra);
        }
        Self::new(file.language, file.threshold, file.intents, entities)
    }

    pub fn new(
        language: Language,
        threshold: f64,
        intents: Vec<IntentSpec>,
        entities: Vec<EntitySpec>,
    ) -> Result<Self, CatalogError> {
        let invalid = |msg: String| CatalogError::Invalid(msg);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        if intents.is_empty() {
            return Err(invalid("catalog has no intents".into()));
        }

        let mut compiled_entities = BTreeMap::new();
        for spec in entities {
            if spec.name.is_empty() {
                return Err(invalid("entity with empty name".into()));
            }
            let matcher = match spec.kind {
                EntityKind::Enumerated => {
                    if spec.values.is_empty() {
                        return Err(invalid(format!("enumerated entity {} has no values", spec.name)));
                    }
                    let mut synonyms = Vec::new();
                    for (canonical, syns) in &spec.values {
                        if syns.is_empty() {
                            return Err(invalid(format!(
                                "value {canonical} of entity {} has no synonyms",
                                spec.name
                            )));
                        }
                        for syn in syns {
                            let re = keyword_regex(std::slice::from_ref(syn))
                                .map_err(|e| invalid(format!("entity {}: {e}", spec.name)))?;
                            synonyms.push((re, syn.chars().count(), canonical.clone()));
                        }
                    }
                    EntityMatcher::Enumerated(synonyms)
                }
                EntityKind::Date => EntityMatcher::Date,
                EntityKind::DigitString => {
                    let min = spec.min_len.unwrap_or(1);
                    let max = spec.max_len.unwrap_or(usize::MAX);
                    if min > max {
                        return Err(invalid(format!("entity {}: min_len > max_len", spec.name)));
                    }
                    EntityMatcher::DigitString { min, max }
                }
                EntityKind::FreeText => {
                    let capture = spec
                        .capture
                        .as_deref()
                        .map(ci_regex)
                        .transpose()
                        .map_err(|e| invalid(format!("entity {}: {e}", spec.name)))?;
                    EntityMatcher::FreeText(capture)
                }
            };
            let name = spec.name.clone();
            if compiled_entities
                .insert(name.clone(), CompiledEntity { spec, matcher })
                .is_some()
            {
                return Err(invalid(format!("duplicate entity {name}")));
            }
        }

        let reserved = [FALLBACK_INTENT, QUICK_REPLY_INTENT, MEDIA_INTENT];
        let mut names = BTreeSet::new();
        let mut compiled_intents = Vec::with_capacity(intents.len());
        for spec in intents {
            if spec.name.is_empty() {
                return Err(invalid("intent with empty name".into()));
            }
            if reserved.contains(&spec.name.as_str()) {
                return Err(invalid(format!("intent name {} is reserved", spec.name)));
            }
            if !names.insert(spec.name.clone()) {
                return Err(invalid(format!("duplicate intent {}", spec.name)));
            }
            if spec.patterns.is_empty() {
                return Err(invalid(format!("intent {} has no patterns", spec.name)));
            }
            for entity in &spec.entities {
                if !compiled_entities.contains_key(entity) {
                    return Err(invalid(format!("intent {} references unknown entity {entity}", spec.name)));
                }
            }
            let mut patterns = Vec::with_capacity(spec.patterns.len());
            for p in &spec.patterns {
                if !(p.weight > 0.0 && p.weight.is_finite()) {
                    return Err(invalid(format!("intent {}: pattern weight must be positive", spec.name)));
                }
                let kinds = usize::from(!p.keywords.is_empty())
                    + usize::from(p.regex.is_some())
                    + usize::from(!p.entities.is_empty());
                if kinds != 1 {
                    return Err(invalid(format!(
                        "intent {}: each pattern needs exactly one of keywords, regex, entities",
                        spec.name
                    )));
                }
                let matcher = if !p.keywords.is_empty() {
                    Matcher::Regex(keyword_regex(&p.keywords).map_err(|e| invalid(format!("intent {}: {e}", spec.name)))?)
                } else if let Some(re) = &p.regex {
                    Matcher::Regex(ci_regex(re).map_err(|e| invalid(format!("intent {}: {e}", spec.name)))?)
                } else {
                    for e in &p.entities {
                        if !compiled_entities.contains_key(e) {
                            return Err(invalid(format!("intent {} pattern references unknown entity {e}", spec.name)));
                        }
                    }
                    Matcher::Entities(p.entities.clone())
                };
                patterns.push(CompiledPattern {
                    matcher,
                    weight: p.weight,
                });
            }
            let total_weight = patterns.iter().map(|p| p.weight).sum();
            compiled_intents.push(CompiledIntent {
                spec,
                patterns,
                total_weight,
            });
        }

        Ok(Self {
            language,
            threshold,
            intents: compiled_intents,
            entities: compiled_entities,
            lexicon: EmojiLexicon::builtin().clone(),
        })
    }

    pub fn with_lexicon(mut self, lexicon: EmojiLexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn intents(&self) -> impl Iterator<Item = &IntentSpec> {
        self.intents.iter().map(|i| &i.spec)
    }

    /// All intent names, including the built-in ones.
    pub fn intent_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.intents.iter().map(|i| i.spec.name.clone()).collect();
        names.extend([FALLBACK_INTENT, QUICK_REPLY_INTENT, MEDIA_INTENT].map(String::from));
        names
    }

    pub fn entity(&self, name: &str) -> Option<&EntitySpec> {
        self.entities.get(name).map(|e| &e.spec)
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    /// Entities an intent may carry; the built-in quick-reply intent carries
    /// the selected option.
    pub fn intent_entities(&self, intent: &str) -> Vec<String> {
        if intent == QUICK_REPLY_INTENT {
            return vec![OPTION_PARAM.to_owned()];
        }
        self.intents
            .iter()
            .find(|i| i.spec.name == intent)
            .map(|i| i.spec.entities.clone())
            .unwrap_or_default()
    }

    fn extract_entity(entity: &CompiledEntity, text: &str, reference: NaiveDate) -> Option<ParamValue> {
        match &entity.matcher {
            EntityMatcher::Enumerated(synonyms) => synonyms
                .iter()
                .filter_map(|(re, len, canonical)| re.find(text).map(|m| (m.start(), std::cmp::Reverse(*len), canonical)))
                .min()
                .map(|(_, _, canonical)| ParamValue::Text(canonical.clone())),
            EntityMatcher::Date => extract_date(text, reference).ok().flatten().map(ParamValue::Date),
            EntityMatcher::DigitString { min, max } => DIGIT_RUN.find_iter(text).find_map(|m| {
                let digits: String = m.as_str().chars().filter(char::is_ascii_digit).collect();
                (*min..=*max)
                    .contains(&digits.len())
                    .then_some(ParamValue::Text(digits))
            }),
            EntityMatcher::FreeText(None) => {
                let trimmed = text.trim();
                (!trimmed.is_empty()).then(|| ParamValue::Text(trimmed.to_owned()))
            }
            EntityMatcher::FreeText(Some(re)) => re
                .captures(text)
                .and_then(|c| c.get(1))
                .map(|m| ParamValue::Text(m.as_str().trim().to_owned())),
        }
    }

    /// Scores every intent against `text`; exposed for diagnostics and tests.
    /// Returns (intent, confidence, matched weight) for intents with any match.
    pub fn scores(&self, text: &str, reference: NaiveDate) -> Vec<(String, f64, f64)> {
        let text = text.trim();
        let extracted = self.extract_all(text, reference);
        self.score_with(text, &extracted)
    }

    fn extract_all(&self, text: &str, reference: NaiveDate) -> BTreeMap<String, ParamValue> {
        self.entities
            .iter()
            .filter_map(|(name, e)| Self::extract_entity(e, text, reference).map(|v| (name.clone(), v)))
            .collect()
    }

    fn score_with(&self, text: &str, extracted: &BTreeMap<String, ParamValue>) -> Vec<(String, f64, f64)> {
        self.intents
            .iter()
            .filter_map(|intent| {
                let matched: f64 = intent
                    .patterns
                    .iter()
                    .filter(|p| match &p.matcher {
                        Matcher::Regex(re) => re.is_match(text),
                        Matcher::Entities(names) => names.iter().any(|n| extracted.contains_key(n)),
                    })
                    .map(|p| p.weight)
                    .sum();
                (matched > 0.0).then(|| (intent.spec.name.clone(), matched / intent.total_weight, matched))
            })
            .collect()
    }

    pub fn understand(&self, text: &str, reference: NaiveDate) -> MessageUnderstanding {
        let sentiment = self.lexicon.sentiment(text);
        let trimmed = text.trim();
        let extracted = self.extract_all(trimmed, reference);
        let winner = self
            .score_with(trimmed, &extracted)
            .into_iter()
            .filter(|(_, confidence, _)| *confidence >= self.threshold)
            .min_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then_with(|| b.2.total_cmp(&a.2))
                    .then_with(|| a.0.cmp(&b.0))
            });
        let Some((intent, confidence, _)) = winner else {
            return MessageUnderstanding::fallback(trimmed, sentiment);
        };
        let allowed = self.intent_entities(&intent);
        let parameters = extracted
            .into_iter()
            .filter(|(name, _)| allowed.contains(name))
            .collect();
        MessageUnderstanding {
            intent,
            confidence,
            parameters,
            raw_text: trimmed.to_owned(),
            media_kind: None,
            sentiment,
        }
    }
}

impl Understander for Catalog {
    fn understand(&self, text: &str, reference_date: NaiveDate) -> MessageUnderstanding {
        Catalog::understand(self, text, reference_date)
    }

    fn is_intent(&self, name: &str) -> bool {
        self.intents.iter().any(|i| i.spec.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
language = "en"
threshold = 0.5

[[intent]]
name = "affirm"
[[intent.pattern]]
keywords = ["yes", "ja", "ok", "okay", "good", "correct", "genau"]

[[intent]]
name = "deny"
[[intent.pattern]]
keywords = ["no", "nein", "not correct"]
weight = 2.0

[[intent]]
name = "phone_broken"
entities = ["damage_type", "phone_type"]
[[intent.pattern]]
keywords = ["broke", "broken", "cracked"]
[[intent.pattern]]
keywords = ["phone", "smartphone", "display", "screen"]

[[intent]]
name = "inform"
entities = ["damage_type", "imei"]
[[intent.pattern]]
entities = ["damage_type", "imei"]

[[entity]]
name = "damage_type"
kind = "enumerated"
[entity.values]
display_damage = ["display", "screen"]
water_damage = ["water", "wet"]

[[entity]]
name = "phone_type"
kind = "enumerated"
[entity.values]
iphone_8 = ["iphone 8"]
iphone_any = ["iphone"]

[[entity]]
name = "imei"
kind = "digit_string"
min_len = 14
max_len = 16
"#;

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 6, 10).unwrap()
    }

    fn catalog() -> Catalog {
        Catalog::from_toml(MINI).unwrap()
    }

    #[test]
    fn display_broke() {
        let u = catalog().understand("the display of my smartphone broke", today());
        assert_eq!(u.intent, "phone_broken");
        assert_eq!(u.confidence, 1.0);
        assert_eq!(u.text_param("damage_type"), Some("display_damage"));
        assert!(!u.parameters.contains_key("phone_type"));
    }

    #[test]
    fn gibberish_is_fallback() {
        let u = catalog().understand("qwertyuiop", today());
        assert!(u.is_fallback());
        assert_eq!(u.confidence, 0.0);
        assert!(u.parameters.is_empty());
    }

    #[test]
    fn affirmation_lexicon() {
        for word in ["yes", "ja", "ok", "okay", "good", "correct", "genau"] {
            let u = catalog().understand(word, today());
            assert_eq!(u.intent, "affirm", "{word}");
            assert!(u.confidence >= 0.5);
        }
    }

    #[test]
    fn heavier_match_breaks_confidence_tie() {
        // affirm ("correct") and deny ("not correct") both score 1.0
        let u = catalog().understand("that is not correct", today());
        assert_eq!(u.intent, "deny");
    }

    #[test]
    fn name_breaks_full_tie() {
        // affirm and inform both match fully with weight 1
        let u = catalog().understand("ok water", today());
        assert_eq!(u.intent, "affirm");
    }

    #[test]
    fn half_match_reaches_threshold() {
        let u = catalog().understand("it broke", today());
        assert_eq!(u.intent, "phone_broken");
        assert_eq!(u.confidence, 0.5);
    }

    #[test]
    fn longest_synonym_wins_at_same_position() {
        let u = catalog().understand("my iphone 8 display broke", today());
        assert_eq!(u.text_param("phone_type"), Some("iphone_8"));
    }

    #[test]
    fn digit_string_bounds() {
        let u = catalog().understand("imei 49015420323751 8", today());
        assert_eq!(u.intent, "inform");
        assert_eq!(u.text_param("imei"), Some("49015420323751"));
        let u = catalog().understand("4901-5420-3237-518", today());
        assert_eq!(u.text_param("imei"), Some("490154203237518"));
        assert!(catalog().understand("12345", today()).is_fallback());
    }

    #[test]
    fn validation_errors() {
        let no_patterns = "[[intent]]\nname = \"x\"\n";
        assert!(matches!(Catalog::from_toml(no_patterns), Err(CatalogError::Invalid(_))));
        let unknown_entity = "[[intent]]\nname = \"x\"\nentities = [\"nope\"]\n[[intent.pattern]]\nkeywords = [\"x\"]\n";
        assert!(Catalog::from_toml(unknown_entity).unwrap_err().to_string().contains("nope"));
        let dup = "[[intent]]\nname = \"x\"\n[[intent.pattern]]\nkeywords = [\"x\"]\n[[intent]]\nname = \"x\"\n[[intent.pattern]]\nkeywords = [\"y\"]\n";
        assert!(Catalog::from_toml(dup).unwrap_err().to_string().contains("duplicate"));
        let reserved = "[[intent]]\nname = \"fallback\"\n[[intent.pattern]]\nkeywords = [\"x\"]\n";
        assert!(Catalog::from_toml(reserved).is_err());
        assert!(matches!(Catalog::from_toml("intent = 3"), Err(CatalogError::Parse(_))));
    }

    #[test]
    fn quick_reply_mapping() {
        let c = catalog();
        assert_eq!(c.understand_option("affirm").intent, "affirm");
        let u = c.understand_option("iphone_8");
        assert_eq!(u.intent, QUICK_REPLY_INTENT);
        assert_eq!(u.text_param(OPTION_PARAM), Some("iphone_8"));
    }
}
