//! Phone and tablet damage claim intake bot.

pub mod claims;
pub mod phones;
pub mod scenario;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{Engine, RuleError, RuleTable};
use crate::nlu::{Catalog, CatalogError, Language};
use crate::respond::{TemplateError, TemplateTable};

pub use claims::{
    list_records, submit_claim, Claim, ClaimEffects, ClaimError, ClaimFrame, ClaimRecord, ClaimSink, DamageType,
    DirSink, MemorySink, CLAIM_ID_KEY, SUBMIT_EFFECT,
};
pub use phones::{PhoneCatalog, PhoneCatalogError, PhoneModel};
pub use scenario::build_scenario;

/// Questionnaire slots in the order they are asked.
pub const SLOTS: [&str; 6] = [
    "damage_type",
    "phone_model",
    "phone_number",
    "imei",
    "damage_date",
    "event_details",
];

pub const PHONE_MODEL_ENTITY: &str = "phone_model";

const CATALOG_DE: &str = include_str!("../../data/catalog_de.toml");
const CATALOG_EN: &str = include_str!("../../data/catalog_en.toml");
const TEMPLATES_DE: &str = include_str!("../../data/templates_de.toml");
const TEMPLATES_EN: &str = include_str!("../../data/templates_en.toml");
const PHONES: &str = include_str!("../../data/phones.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BotError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Phones(#[from] PhoneCatalogError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

/// Source text of the bot's data files.
#[derive(Debug, Clone)]
pub struct BotSources {
    pub catalog: String,
    pub templates: String,
    pub phones: String,
}

impl BotSources {
    pub fn builtin(language: Language) -> Self {
        let (catalog, templates) = match language {
            Language::De => (CATALOG_DE, TEMPLATES_DE),
            Language::En => (CATALOG_EN, TEMPLATES_EN),
        };
        Self {
            catalog: catalog.to_owned(),
            templates: templates.to_owned(),
            phones: PHONES.to_owned(),
        }
    }
}

pub fn read_source(path: &Path) -> Result<String, BotError> {
    std::fs::read_to_string(path).map_err(|e| BotError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Validated catalog, templates and rule table; engines are made from it.
#[derive(Debug, Clone)]
pub struct ClaimBot {
    catalog: Arc<Catalog>,
    templates: Arc<TemplateTable>,
    phones: Arc<PhoneCatalog>,
    table: RuleTable,
}

impl ClaimBot {
    pub fn builtin(language: Language) -> Result<Self, BotError> {
        Self::from_sources(&BotSources::builtin(language))
    }

    pub fn from_sources(src: &BotSources) -> Result<Self, BotError> {
        let phones = Arc::new(PhoneCatalog::from_toml(&src.phones)?);
        let catalog = Catalog::from_toml_with(&src.catalog, vec![phones.entity(PHONE_MODEL_ENTITY)])?;
        let templates = TemplateTable::from_toml(&src.templates)?;
        let table = build_scenario(Arc::clone(&phones), catalog.language())?;
        table.check_templates(&templates)?;
        Ok(Self {
            catalog: Arc::new(catalog),
            templates: Arc::new(templates),
            phones,
            table,
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn templates(&self) -> &Arc<TemplateTable> {
        &self.templates
    }

    pub fn phones(&self) -> &Arc<PhoneCatalog> {
        &self.phones
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }

    pub fn language(&self) -> Language {
        self.catalog.language()
    }

    /// Same bot with different response texts.
    pub fn with_templates(&self, templates: TemplateTable) -> Result<Self, BotError> {
        self.table.check_templates(&templates)?;
        Ok(Self {
            templates: Arc::new(templates),
            ..self.clone()
        })
    }

    pub fn engine(&self, sink: Arc<dyn ClaimSink>, seed: u64) -> Engine {
        Engine::new(self.table.clone(), self.catalog.clone(), self.templates.clone())
            .expect("templates checked at construction")
            .with_effects(Arc::new(ClaimEffects::new(sink)))
            .with_seed(seed)
    }
}
