//! What a handler callback returns: planned actions, queue transitions,
//! context updates and side effects, all as plain data.

use std::collections::BTreeMap;

use crate::nlu::Sentiment;
use crate::respond::Formality;

use super::state::DialogState;

/// Value substituted into a template placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fill {
    Text(String),
    /// Rendered from another (placeholder-free) template at the same formality.
    Template(String),
    /// Output of an effect run during the same turn.
    Effect(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Text {
    Template { id: String, fills: BTreeMap<String, Fill> },
    Literal(String),
}

impl Text {
    pub fn template(id: impl Into<String>) -> Self {
        Text::Template {
            id: id.into(),
            fills: BTreeMap::new(),
        }
    }

    pub fn fill(self, name: impl Into<String>, fill: Fill) -> Self {
        match self {
            Text::Template { id, mut fills } => {
                fills.insert(name.into(), fill);
                Text::Template { id, fills }
            }
            literal => literal,
        }
    }

    pub fn fill_text(self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.fill(name, Fill::Text(value.into()))
    }

    pub fn template_id(&self) -> Option<&str> {
        match self {
            Text::Template { id, .. } => Some(id),
            Text::Literal(_) => None,
        }
    }

    /// Template ids referenced by this text, nested fills included.
    pub fn template_ids(&self) -> Vec<&str> {
        match self {
            Text::Literal(_) => Vec::new(),
            Text::Template { id, fills } => std::iter::once(id.as_str())
                .chain(fills.values().filter_map(|f| match f {
                    Fill::Template(t) => Some(t.as_str()),
                    _ => None,
                }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannedAction {
    Say(Text),
    QuickReplies { prompt: Text, options: Vec<(String, Text)> },
    RequestMedia(Text),
}

impl PlannedAction {
    pub fn say(id: impl Into<String>) -> Self {
        PlannedAction::Say(Text::template(id))
    }

    pub fn template_ids(&self) -> Vec<&str> {
        match self {
            PlannedAction::Say(t) | PlannedAction::RequestMedia(t) => t.template_ids(),
            PlannedAction::QuickReplies { prompt, options } => prompt
                .template_ids()
                .into_iter()
                .chain(options.iter().flat_map(|(_, t)| t.template_ids()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transition {
    /// Add on top of whatever is active.
    Layer(DialogState),
    /// Take the place of the state whose handler fired (plain layering when
    /// a stateless or fallback handler fired).
    Replace(DialogState),
    Drop(String),
    Clear,
}

impl Transition {
    pub fn target(&self) -> Option<&str> {
        match self {
            Transition::Layer(s) | Transition::Replace(s) => Some(&s.name),
            Transition::Drop(_) | Transition::Clear => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContextUpdate {
    /// Writes a slot value; ignored for slots that are already confirmed.
    SetSlot { name: String, value: String, confirmed: bool },
    ConfirmSlot(String),
    /// Explicit removal; the only way a confirmed slot goes away.
    ClearSlot(String),
    ClearSlots,
    SetFormality(Formality),
    SetMood(Sentiment),
    SetUserName(String),
}

/// Side effect executed by the engine's effect handler after planning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Effect {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl Effect {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanOutcome {
    pub actions: Vec<PlannedAction>,
    pub transitions: Vec<Transition>,
    pub updates: Vec<ContextUpdate>,
    pub effects: Vec<Effect>,
}

impl PlanOutcome {
    /// Outcome of a rule that deliberately says nothing.
    pub fn silent() -> Self {
        Self::default()
    }

    pub fn say(id: impl Into<String>) -> Self {
        Self::default().then_say(Text::template(id))
    }

    pub fn then_say(mut self, text: Text) -> Self {
        self.actions.push(PlannedAction::Say(text));
        self
    }

    pub fn action(mut self, action: PlannedAction) -> Self {
        self.actions.push(action);
        self
    }

    pub fn transition(mut self, t: Transition) -> Self {
        self.transitions.push(t);
        self
    }

    pub fn update(mut self, u: ContextUpdate) -> Self {
        self.updates.push(u);
        self
    }

    pub fn effect(mut self, e: Effect) -> Self {
        self.effects.push(e);
        self
    }

    /// Appends `other` after `self`.
    pub fn merge(mut self, other: PlanOutcome) -> Self {
        self.actions.extend(other.actions);
        self.transitions.extend(other.transitions);
        self.updates.extend(other.updates);
        self.effects.extend(other.effects);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.transitions.is_empty() && self.updates.is_empty() && self.effects.is_empty()
    }
}
