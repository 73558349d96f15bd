//! Response templates, formality handling and realization of planned actions.
//!
//! Template file layout (TOML):
//!
//! ```toml
//! [greet]
//! placeholders = ["name"]
//! formal = ["Guten Tag {name}!", "Hallo {name}, schön dass Sie da sind."]
//! informal = ["Hi {name}!"]
//!
//! [ask_imei]
//! text = "What is the IMEI of the device?"   # same text for both levels
//! ```
//!
//! `{{` and `}}` produce literal braces.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::SystemTime;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::plan::{Fill, PlannedAction, Text};
use crate::msgmodel::{ChatAction, QuickReplyOption};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormalityLevel {
    #[default]
    Formal,
    Informal,
}

impl FormalityLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            FormalityLevel::Formal => "formal",
            FormalityLevel::Informal => "informal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormalitySource {
    #[default]
    Default,
    Detected,
    Explicit,
}

/// Address level towards the user. Starts formal until changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Formality {
    pub level: FormalityLevel,
    pub source: FormalitySource,
}

impl Formality {
    pub fn detected(level: FormalityLevel) -> Self {
        Self {
            level,
            source: FormalitySource::Detected,
        }
    }
}

static INFORMAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(du|dich|dir|dein|deine|deinen|deinem|deiner|deines)\b").unwrap());
// Case-sensitive on purpose: lower-case "sie"/"ihnen" mean she/they/them.
static FORMAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(Sie|Ihnen|Ihr|Ihre|Ihren|Ihrem|Ihrer)\b").unwrap());

/// Pronoun-based address detection. A capitalized formal pronoun only counts
/// mid-sentence, where it cannot be a capitalized "sie". Conflicting cues
/// yield no change.
pub fn detect_formality(text: &str) -> Option<Formality> {
    let informal = INFORMAL.is_match(text);
    let formal = FORMAL.find_iter(text).any(|m| {
        let before = text[..m.start()].trim_end();
        !before.is_empty() && !before.ends_with(['.', '!', '?', ':'])
    });
    match (informal, formal) {
        (true, false) => Some(Formality::detected(FormalityLevel::Informal)),
        (false, true) => Some(Formality::detected(FormalityLevel::Formal)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template parse error: {0}")]
    Parse(String),
    #[error("template {id}: missing {level} variant")]
    MissingVariant { id: String, level: &'static str },
    #[error("template {id}: {level} variant {index} has placeholders {found:?}, expected {expected:?}")]
    PlaceholderMismatch {
        id: String,
        level: &'static str,
        index: usize,
        expected: BTreeSet<String>,
        found: BTreeSet<String>,
    },
    #[error("template {id}: unbalanced braces in {level} variant {index}")]
    Syntax { id: String, level: &'static str, index: usize },
}

impl TemplateError {
    pub fn template_id(&self) -> Option<&str> {
        match self {
            TemplateError::Parse(_) => None,
            TemplateError::MissingVariant { id, .. }
            | TemplateError::PlaceholderMismatch { id, .. }
            | TemplateError::Syntax { id, .. } => Some(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {id}: no value for placeholder {name}")]
    MissingPlaceholder { id: String, name: String },
    #[error("effect output {0} not available")]
    MissingEffectOutput(String),
    #[error("invalid action from template {id}: {reason}")]
    InvalidAction { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

fn parse_segments(src: &str) -> Option<Vec<Segment>> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                literal.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                literal.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next()? {
                        '}' => break,
                        c if c.is_alphanumeric() || c == '_' => name.push(c),
                        _ => return None,
                    }
                }
                if name.is_empty() {
                    return None;
                }
                if !literal.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                out.push(Segment::Placeholder(name));
            }
            '}' => return None,
            c => literal.push(c),
        }
    }
    if !literal.is_empty() {
        out.push(Segment::Literal(literal));
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Variant {
    source: String,
    segments: Vec<Segment>,
}

impl Variant {
    fn placeholders(&self) -> BTreeSet<String> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p.clone()),
                Segment::Literal(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseTemplate {
    pub id: String,
    pub required_placeholders: BTreeSet<String>,
    formal: Vec<Variant>,
    informal: Vec<Variant>,
}

impl ResponseTemplate {
    fn variants(&self, level: FormalityLevel) -> &[Variant] {
        match level {
            FormalityLevel::Formal => &self.formal,
            FormalityLevel::Informal => &self.informal,
        }
    }

    pub fn variant_texts(&self, level: FormalityLevel) -> impl Iterator<Item = &str> {
        self.variants(level).iter().map(|v| v.source.as_str())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemplate {
    #[serde(default)]
    placeholders: Vec<String>,
    formal: Option<OneOrMany>,
    informal: Option<OneOrMany>,
    text: Option<OneOrMany>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateTable {
    templates: BTreeMap<String, ResponseTemplate>,
}

/// Deterministic variant choice for a given seed.
pub fn choose_variant(seed: u64, count: usize) -> usize {
    if count <= 1 {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..count)
}

impl TemplateTable {
    pub fn from_toml(src: &str) -> Result<Self, TemplateError> {
        let raw: BTreeMap<String, RawTemplate> = toml::from_str(src).map_err(|e| TemplateError::Parse(e.to_string()))?;
        let mut templates = BTreeMap::new();
        for (id, raw) in raw {
            let template = Self::compile(&id, raw)?;
            templates.insert(id, template);
        }
        Ok(Self { templates })
    }

    pub fn from_path(path: &Path) -> Result<Self, TemplateError> {
        let src = std::fs::read_to_string(path).map_err(|e| TemplateError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    fn compile(id: &str, raw: RawTemplate) -> Result<ResponseTemplate, TemplateError> {
        let shared = raw.text.map(OneOrMany::into_vec);
        let formal = raw.formal.map(OneOrMany::into_vec).or_else(|| shared.clone());
        let informal = raw.informal.map(OneOrMany::into_vec).or(shared);
        let required: BTreeSet<String> = raw.placeholders.into_iter().collect();
        let compile_level = |texts: Option<Vec<String>>, level: FormalityLevel| {
            let texts = texts
                .filter(|t| !t.is_empty())
                .ok_or_else(|| TemplateError::MissingVariant {
                    id: id.to_owned(),
                    level: level.as_str(),
                })?;
            texts
                .into_iter()
                .enumerate()
                .map(|(index, source)| {
                    let segments = parse_segments(&source).ok_or_else(|| TemplateError::Syntax {
                        id: id.to_owned(),
                        level: level.as_str(),
                        index,
                    })?;
                    let variant = Variant { source, segments };
                    let found = variant.placeholders();
                    if found != required {
                        return Err(TemplateError::PlaceholderMismatch {
                            id: id.to_owned(),
                            level: level.as_str(),
                            index,
                            expected: required.clone(),
                            found,
                        });
                    }
                    Ok(variant)
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let formal = compile_level(formal, FormalityLevel::Formal)?;
        let informal = compile_level(informal, FormalityLevel::Informal)?;
        Ok(ResponseTemplate {
            id: id.to_owned(),
            required_placeholders: required,
            formal,
            informal,
        })
    }

    pub fn get(&self, id: &str) -> Option<&ResponseTemplate> {
        self.templates.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ResponseTemplate> {
        self.templates.values()
    }

    /// Applies `edit` to the source of every variant, e.g. to simulate copy
    /// changes. Placeholders must survive the edit.
    pub fn map_text(&self, edit: impl Fn(&str) -> String) -> Result<Self, TemplateError> {
        let mut templates = BTreeMap::new();
        for (id, t) in &self.templates {
            let raw = RawTemplate {
                placeholders: t.required_placeholders.iter().cloned().collect(),
                formal: Some(OneOrMany::Many(t.formal.iter().map(|v| edit(&v.source)).collect())),
                informal: Some(OneOrMany::Many(t.informal.iter().map(|v| edit(&v.source)).collect())),
                text: None,
            };
            templates.insert(id.clone(), Self::compile(id, raw)?);
        }
        Ok(Self { templates })
    }

    pub fn render(
        &self,
        id: &str,
        level: FormalityLevel,
        fills: &BTreeMap<String, String>,
        seed: u64,
    ) -> Result<String, RenderError> {
        let template = self
            .templates
            .get(id)
            .ok_or_else(|| RenderError::UnknownTemplate(id.to_owned()))?;
        let variants = template.variants(level);
        substitute(id, &variants[choose_variant(seed, variants.len())], fills)
    }

    /// Renders every variant of every template at both levels with dummy
    /// fills; returns the failures.
    pub fn lint(&self) -> Vec<RenderError> {
        let mut errors = Vec::new();
        for t in self.templates.values() {
            let fills: BTreeMap<String, String> = t
                .required_placeholders
                .iter()
                .map(|p| (p.clone(), format!("<{p}>")))
                .collect();
            for level in [FormalityLevel::Formal, FormalityLevel::Informal] {
                errors.extend(t.variants(level).iter().filter_map(|v| substitute(&t.id, v, &fills).err()));
            }
        }
        errors
    }
}

fn substitute(id: &str, variant: &Variant, fills: &BTreeMap<String, String>) -> Result<String, RenderError> {
    let mut out = String::with_capacity(variant.source.len());
    for segment in &variant.segments {
        match segment {
            Segment::Literal(s) => out.push_str(s),
            Segment::Placeholder(name) => {
                let value = fills.get(name).ok_or_else(|| RenderError::MissingPlaceholder {
                    id: id.to_owned(),
                    name: name.clone(),
                })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

/// Seed for the `index`-th action of turn `turn`.
pub fn action_seed(base: u64, turn: u64, index: usize) -> u64 {
    base ^ turn.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Turns planned actions into concrete chat actions.
#[derive(Debug, Clone)]
pub struct Responder {
    templates: Arc<TemplateTable>,
}

impl Responder {
    pub fn new(templates: Arc<TemplateTable>) -> Self {
        Self { templates }
    }

    pub fn templates(&self) -> &Arc<TemplateTable> {
        &self.templates
    }

    fn realize_text(
        &self,
        text: &Text,
        level: FormalityLevel,
        seed: u64,
        effect_output: &BTreeMap<String, String>,
    ) -> Result<(String, Option<String>), RenderError> {
        match text {
            Text::Literal(s) => Ok((s.clone(), None)),
            Text::Template { id, fills } => {
                let mut resolved = BTreeMap::new();
                for (name, fill) in fills {
                    let value = match fill {
                        Fill::Text(s) => s.clone(),
                        Fill::Template(inner) => self.templates.render(inner, level, &BTreeMap::new(), seed)?,
                        Fill::Effect(key) => effect_output
                            .get(key)
                            .cloned()
                            .ok_or_else(|| RenderError::MissingEffectOutput(key.clone()))?,
                    };
                    resolved.insert(name.clone(), value);
                }
                Ok((self.templates.render(id, level, &resolved, seed)?, Some(id.clone())))
            }
        }
    }

    pub fn realize(
        &self,
        action: &PlannedAction,
        level: FormalityLevel,
        seed: u64,
        effect_output: &BTreeMap<String, String>,
    ) -> Result<ChatAction, RenderError> {
        let (action, template) = match action {
            PlannedAction::Say(text) => {
                let (s, id) = self.realize_text(text, level, seed, effect_output)?;
                (ChatAction::text(s), id)
            }
            PlannedAction::RequestMedia(text) => {
                let (s, id) = self.realize_text(text, level, seed, effect_output)?;
                (ChatAction::request_media(s), id)
            }
            PlannedAction::QuickReplies { prompt, options } => {
                let (s, id) = self.realize_text(prompt, level, seed, effect_output)?;
                let options = options
                    .iter()
                    .map(|(opt_id, label)| {
                        self.realize_text(label, level, seed, effect_output)
                            .map(|(label, _)| QuickReplyOption::new(opt_id.clone(), label))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let action = ChatAction::quick_replies(s, options).map_err(|e| RenderError::InvalidAction {
                    id: id.clone().unwrap_or_default(),
                    reason: e.to_string(),
                })?;
                (action, id)
            }
        };
        Ok(match template {
            Some(id) => action.with_meta("template", id),
            None => action,
        })
    }
}

/// A template file that can be re-read when it changes on disk.
#[derive(Debug)]
pub struct TemplateFile {
    path: PathBuf,
    modified: Option<SystemTime>,
}

impl TemplateFile {
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, TemplateTable), TemplateError> {
        let path = path.into();
        let modified = std::fs::metadata(&path).and_then(|m| m.modified()).ok();
        let table = TemplateTable::from_path(&path)?;
        Ok((Self { path, modified }, table))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// `Ok(Some(table))` when the file changed since the last successful load.
    pub fn reload_if_changed(&mut self) -> Result<Option<TemplateTable>, TemplateError> {
        let modified = std::fs::metadata(&self.path).and_then(|m| m.modified()).ok();
        if modified == self.modified {
            return Ok(None);
        }
        let table = TemplateTable::from_path(&self.path)?;
        self.modified = modified;
        Ok(Some(table))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
[greet]
placeholders = ["name"]
formal = ["Guten Tag {name}, wie kann ich Ihnen helfen?", "Hallo {name}! Was kann ich für Sie tun?"]
informal = ["Hi {name}, wie kann ich dir helfen?", "Hallo {name}! Was kann ich für dich tun?"]

[ask_imei]
text = "What is the IMEI of the device?"

[braces]
text = "{{literal}} {x}"
placeholders = ["x"]
"#;

    fn fills(name: &str) -> BTreeMap<String, String> {
        BTreeMap::from([("name".to_owned(), name.to_owned())])
    }

    #[test]
    fn detects_du() {
        assert_eq!(
            detect_formality("kannst du mir helfen").map(|f| f.level),
            Some(FormalityLevel::Informal)
        );
        assert_eq!(
            detect_formality("Hast Du kurz Zeit?").map(|f| f.level),
            Some(FormalityLevel::Informal)
        );
    }

    #[test]
    fn detects_sie_mid_sentence() {
        assert_eq!(
            detect_formality("Können Sie mir helfen").map(|f| f.level),
            Some(FormalityLevel::Formal)
        );
        assert_eq!(detect_formality("Sie ist krank."), None);
        assert_eq!(detect_formality("Gut. Sie ist weg."), None);
    }

    #[test]
    fn no_pronoun_no_change() {
        assert_eq!(detect_formality("my screen broke"), None);
        assert_eq!(detect_formality("kannst du Ihnen helfen"), None);
    }

    #[test]
    fn renders_by_formality() {
        let t = TemplateTable::from_toml(SAMPLE).unwrap();
        let informal = t.render("greet", FormalityLevel::Informal, &fills("Anna"), 7).unwrap();
        let formal = t.render("greet", FormalityLevel::Formal, &fills("Anna"), 7).unwrap();
        assert!(informal.contains("Anna") && (informal.contains("dir") || informal.contains("dich")));
        assert!(formal.contains("Anna") && (formal.contains("Ihnen") || formal.contains("Sie")));
        assert_ne!(informal, formal);
    }

    #[test]
    fn shared_text_and_escapes() {
        let t = TemplateTable::from_toml(SAMPLE).unwrap();
        let a = t.render("ask_imei", FormalityLevel::Formal, &BTreeMap::new(), 1).unwrap();
        let b = t.render("ask_imei", FormalityLevel::Informal, &BTreeMap::new(), 1).unwrap();
        assert_eq!(a, b);
        let x = BTreeMap::from([("x".to_owned(), "1".to_owned())]);
        assert_eq!(t.render("braces", FormalityLevel::Formal, &x, 0).unwrap(), "{literal} 1");
    }

    #[test]
    fn render_errors() {
        let t = TemplateTable::from_toml(SAMPLE).unwrap();
        assert_eq!(
            t.render("nope", FormalityLevel::Formal, &BTreeMap::new(), 0),
            Err(RenderError::UnknownTemplate("nope".into()))
        );
        assert!(matches!(
            t.render("greet", FormalityLevel::Formal, &BTreeMap::new(), 0),
            Err(RenderError::MissingPlaceholder { .. })
        ));
    }

    #[test]
    fn missing_formal_variant() {
        let err = TemplateTable::from_toml("[greet]\ninformal = \"hi\"\n").unwrap_err();
        assert_eq!(err.template_id(), Some("greet"));
        assert!(matches!(err, TemplateError::MissingVariant { level: "formal", .. }));
    }

    #[test]
    fn placeholder_mismatch() {
        let err = TemplateTable::from_toml("[greet]\nplaceholders = [\"name\"]\nformal = \"hi {name}\"\ninformal = \"hi\"\n")
            .unwrap_err();
        assert!(matches!(err, TemplateError::PlaceholderMismatch { level: "informal", .. }));
        assert!(TemplateTable::from_toml("[x]\ntext = \"broken {\"\n").is_err());
    }

    #[test]
    fn lint_passes_on_valid_table() {
        assert!(TemplateTable::from_toml(SAMPLE).unwrap().lint().is_empty());
    }

    proptest! {
        #[test]
        fn formality_changes_wording_not_fills(name in "[A-Z][a-z]{1,10}", seed in any::<u64>()) {
            let t = TemplateTable::from_toml(SAMPLE).unwrap();
            let f = fills(&name);
            let a = t.render("greet", FormalityLevel::Formal, &f, seed).unwrap();
            let b = t.render("greet", FormalityLevel::Informal, &f, seed).unwrap();
            prop_assert!(a.contains(&name));
            prop_assert!(b.contains(&name));
            prop_assert_eq!(t.render("greet", FormalityLevel::Formal, &f, seed).unwrap(), a);
        }

        #[test]
        fn variant_choice_in_range(seed in any::<u64>(), n in 1usize..10) {
            prop_assert!(choose_variant(seed, n) < n);
            prop_assert_eq!(choose_variant(seed, n), choose_variant(seed, n));
        }
    }
}
