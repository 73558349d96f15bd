//! Device list used to recognise the damaged phone.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::nlu::EntitySpec;

/// Canonical value prefix for an alias shared by several models.
pub const AMBIGUOUS_PREFIX: &str = "ambiguous:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhoneCatalogError {
    #[error("phone catalog parse error: {0}")]
    Parse(String),
    #[error("invalid phone catalog: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhoneModel {
    pub id: String,
    pub name: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhoneFile {
    #[serde(rename = "phone")]
    phones: Vec<PhoneModel>,
}

#[derive(Debug, Clone)]
pub struct PhoneCatalog {
    models: Vec<PhoneModel>,
    /// lowercased alias -> model ids using it
    by_alias: BTreeMap<String, BTreeSet<String>>,
}

impl PhoneCatalog {
    pub fn from_toml(src: &str) -> Result<Self, PhoneCatalogError> {
        let file: PhoneFile = toml::from_str(src).map_err(|e| PhoneCatalogError::Parse(e.to_string()))?;
        Self::new(file.phones)
    }

    pub fn new(models: Vec<PhoneModel>) -> Result<Self, PhoneCatalogError> {
        let invalid = PhoneCatalogError::Invalid;
        if models.is_empty() {
            return Err(invalid("no phone models".into()));
        }
        let mut ids = BTreeSet::new();
        let mut by_alias: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for m in &models {
            if m.id.is_empty() || m.id.starts_with(AMBIGUOUS_PREFIX) {
                return Err(invalid(format!("bad model id {:?}", m.id)));
            }
            if !ids.insert(m.id.as_str()) {
                return Err(invalid(format!("duplicate model id {}", m.id)));
            }
            if m.aliases.is_empty() {
                return Err(invalid(format!("model {} has no aliases", m.id)));
            }
            for alias in &m.aliases {
                let alias = alias.trim().to_lowercase();
                if alias.is_empty() {
                    return Err(invalid(format!("model {} has an empty alias", m.id)));
                }
                by_alias.entry(alias).or_default().insert(m.id.clone());
            }
        }
        Ok(Self { models, by_alias })
    }

    pub fn models(&self) -> &[PhoneModel] {
        &self.models
    }

    pub fn get(&self, id: &str) -> Option<&PhoneModel> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn display_name(&self, id: &str) -> Option<&str> {
        self.get(id).map(|m| m.name.as_str())
    }

    /// Models an alias may refer to, in catalog order.
    pub fn candidates(&self, alias: &str) -> Vec<&PhoneModel> {
        let Some(ids) = self.by_alias.get(&alias.trim().to_lowercase()) else {
            return Vec::new();
        };
        self.models.iter().filter(|m| ids.contains(&m.id)).collect()
    }

    /// NLU entity `name`: unique aliases map to their model id, shared ones to
    /// `ambiguous:<alias>`.
    pub fn entity(&self, name: &str) -> EntitySpec {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (alias, ids) in &self.by_alias {
            let canonical = if ids.len() == 1 {
                ids.iter().next().cloned().unwrap_or_default()
            } else {
                format!("{AMBIGUOUS_PREFIX}{alias}")
            };
            values.entry(canonical).or_default().push(alias.clone());
        }
        EntitySpec::enumerated(name, values)
    }
}

/// Splits `ambiguous:<alias>` into the alias.
pub fn ambiguous_alias(value: &str) -> Option<&str> {
    value.strip_prefix(AMBIGUOUS_PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::{Catalog, IntentSpec, Language, PatternSpec, ParamValue};

    const PHONES: &str = r#"
[[phone]]
id = "iphone_13"
name = "Apple iPhone 13"
aliases = ["iphone 13", "iphone"]
[[phone]]
id = "iphone_14"
name = "Apple iPhone 14"
aliases = ["iPhone 14", "iphone"]
[[phone]]
id = "pixel_8"
name = "Google Pixel 8"
aliases = ["pixel 8", "pixel"]
"#;

    fn catalog(phones: &PhoneCatalog) -> Catalog {
        let intent = IntentSpec {
            name: "inform".into(),
            patterns: vec![PatternSpec {
                keywords: vec![],
                regex: None,
                entities: vec!["phone_model".into()],
                weight: 1.0,
            }],
            entities: vec!["phone_model".into()],
        };
        Catalog::new(Language::En, 0.5, vec![intent], vec![phones.entity("phone_model")]).unwrap()
    }

    fn model(c: &Catalog, text: &str) -> Option<String> {
        let today = chrono::NaiveDate::from_ymd_opt(2026, 1, 1).unwrap();
        match c.understand(text, today).parameters.get("phone_model") {
            Some(ParamValue::Text(s)) => Some(s.clone()),
            _ => None,
        }
    }

    #[test]
    fn aliases_resolve() {
        let phones = PhoneCatalog::from_toml(PHONES).unwrap();
        let c = catalog(&phones);
        assert_eq!(model(&c, "an iPhone 14").as_deref(), Some("iphone_14"));
        assert_eq!(model(&c, "my pixel").as_deref(), Some("pixel_8"));
        assert_eq!(model(&c, "it's an iphone").as_deref(), Some("ambiguous:iphone"));
        assert_eq!(model(&c, "a nokia"), None);
    }

    #[test]
    fn candidates_in_catalog_order() {
        let phones = PhoneCatalog::from_toml(PHONES).unwrap();
        let ids: Vec<_> = phones.candidates("iPhone").iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["iphone_13", "iphone_14"]);
        assert!(phones.candidates("nokia").is_empty());
    }

    #[test]
    fn rejects_duplicates() {
        let src = "[[phone]]\nid = \"a\"\nname = \"A\"\naliases = [\"a\"]\n[[phone]]\nid = \"a\"\nname = \"B\"\naliases = [\"b\"]\n";
        assert!(matches!(PhoneCatalog::from_toml(src), Err(PhoneCatalogError::Invalid(_))));
    }
}
