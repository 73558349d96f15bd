use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::respond::TemplateTable;

use super::handler::Handler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Stateless,
    State,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("rule table needs at least one fallback handler")]
    NoFallback,
    #[error("duplicate handler {key} in {scope}")]
    Duplicate { scope: String, key: String },
    #[error("handler {handler} transitions to undeclared state {state}")]
    UnknownState { handler: String, state: String },
    #[error("handler {handler} uses unknown template {template}")]
    UnknownTemplate { handler: String, template: String },
    #[error("duplicate handler id {0}")]
    DuplicateId(String),
    #[error("empty state name")]
    EmptyStateName,
}

/// Validated, immutable set of rules in three tiers.
#[derive(Debug, Clone)]
pub struct RuleTable {
    stateless: Vec<Handler>,
    by_state: BTreeMap<String, Vec<Handler>>,
    fallbacks: Vec<Handler>,
    terminal: BTreeSet<String>,
    slots: BTreeSet<String>,
}

#[derive(Debug, Default)]
pub struct RuleTableBuilder {
    stateless: Vec<Handler>,
    by_state: BTreeMap<String, Vec<Handler>>,
    fallbacks: Vec<Handler>,
    terminal: BTreeSet<String>,
    slots: BTreeSet<String>,
}

impl RuleTableBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stateless(mut self, handler: Handler) -> Self {
        self.stateless.push(handler);
        self
    }

    pub fn on_state(mut self, state: impl Into<String>, handler: Handler) -> Self {
        self.by_state.entry(state.into()).or_default().push(handler);
        self
    }

    pub fn fallback(mut self, handler: Handler) -> Self {
        self.fallbacks.push(handler);
        self
    }

    /// A state that may be entered but has no handlers of its own.
    pub fn terminal(mut self, state: impl Into<String>) -> Self {
        self.terminal.insert(state.into());
        self
    }

    /// Slot names callbacks may write.
    pub fn slots<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.slots.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn build(self) -> Result<RuleTable, RuleError> {
        if self.fallbacks.is_empty() {
            return Err(RuleError::NoFallback);
        }
        if self.by_state.keys().chain(&self.terminal).any(String::is_empty) {
            return Err(RuleError::EmptyStateName);
        }
        let check_duplicates = |scope: &str, handlers: &[Handler]| -> Result<(), RuleError> {
            let mut seen = BTreeSet::new();
            for h in handlers {
                let key = h.kind.key();
                if !seen.insert(key.clone()) {
                    return Err(RuleError::Duplicate {
                        scope: scope.to_owned(),
                        key,
                    });
                }
            }
            Ok(())
        };
        check_duplicates("stateless", &self.stateless)?;
        check_duplicates("fallbacks", &self.fallbacks)?;
        for (state, handlers) in &self.by_state {
            check_duplicates(&format!("state {state}"), handlers)?;
        }

        let mut ids = BTreeSet::new();
        let all = self
            .stateless
            .iter()
            .chain(self.by_state.values().flatten())
            .chain(&self.fallbacks);
        for h in all {
            if !ids.insert(h.id.as_str()) {
                return Err(RuleError::DuplicateId(h.id.clone()));
            }
            for target in &h.targets {
                if !self.by_state.contains_key(target) && !self.terminal.contains(target) {
                    return Err(RuleError::UnknownState {
                        handler: h.id.clone(),
                        state: target.clone(),
                    });
                }
            }
        }

        Ok(RuleTable {
            stateless: self.stateless,
            by_state: self.by_state,
            fallbacks: self.fallbacks,
            terminal: self.terminal,
            slots: self.slots,
        })
    }
}

impl RuleTable {
    pub fn builder() -> RuleTableBuilder {
        RuleTableBuilder::new()
    }

    pub fn stateless(&self) -> &[Handler] {
        &self.stateless
    }

    pub fn state_handlers(&self, state: &str) -> &[Handler] {
        self.by_state.get(state).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn fallbacks(&self) -> &[Handler] {
        &self.fallbacks
    }

    /// Every state name known to the table.
    pub fn states(&self) -> BTreeSet<&str> {
        self.by_state
            .keys()
            .chain(&self.terminal)
            .map(String::as_str)
            .collect()
    }

    pub fn slots(&self) -> &BTreeSet<String> {
        &self.slots
    }

    pub fn handlers(&self) -> impl Iterator<Item = &Handler> {
        self.stateless
            .iter()
            .chain(self.by_state.values().flatten())
            .chain(&self.fallbacks)
    }

    /// Every template a handler declares must exist.
    pub fn check_templates(&self, templates: &TemplateTable) -> Result<(), RuleError> {
        for h in self.handlers() {
            if let Some(missing) = h.templates.iter().find(|t| !templates.contains(t)) {
                return Err(RuleError::UnknownTemplate {
                    handler: h.id.clone(),
                    template: missing.clone(),
                });
            }
        }
        Ok(())
    }
}
