//! The dialog router.
//!
//! One turn runs: understand → tick lifetimes → dispatch → apply context
//! updates and transitions → run effects → render. A typing notification is
//! always the first action of a turn. Any failure after understanding rolls the
//! context back and answers with an apologetic repair message instead.

mod dispatch;
pub mod handler;
pub mod plan;
pub mod rules;
pub mod state;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::context::{HistoryEntry, SlotValue, UserContext, DEFAULT_HISTORY_LIMIT};
use crate::msgmodel::{ChatAction, Direction, InboundMessage, MediaKind, MediaRef, Payload};
use crate::nlu::{MessageUnderstanding, Understander};
use crate::respond::{action_seed, FormalityLevel, RenderError, Responder, TemplateTable};

pub use dispatch::{decisive_match, dispatch, DispatchTrace, Dispatched};
pub use handler::{Handler, HandlerKind, ParamConstraint, TurnInput};
pub use plan::{ContextUpdate, Effect, Fill, PlanOutcome, PlannedAction, Text, Transition};
pub use rules::{RuleError, RuleTable, RuleTableBuilder, Tier};
pub use state::{tick_lifetimes, DialogState, Lifetime, StateQueue};

/// Template used for the repair message when a turn fails.
pub const INTERNAL_ERROR_TEMPLATE: &str = "internal_error";
const INTERNAL_ERROR_TEXT: &str = "Sorry, something went wrong on my side. Could you say that again?";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("no handler matched")]
    NoHandler,
    #[error("handler {handler} returned a transition to {state}, which it does not declare")]
    UndeclaredTransition { handler: String, state: String },
    #[error("slot {0} is not registered")]
    UnknownSlot(String),
    #[error("effect {name} failed: {reason}")]
    Effect { name: String, reason: String },
    #[error("transcription failed: {0}")]
    Transcription(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

/// Executes named side effects (e.g. submitting a claim). Returned values are
/// available to templates through [`Fill::Effect`].
pub trait EffectHandler: Send + Sync {
    fn apply(
        &self,
        effect: &Effect,
        context: &UserContext,
        inbound: &InboundMessage,
    ) -> Result<BTreeMap<String, String>, String>;
}

/// Effect handler for tables that declare no effects.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoEffects;

impl EffectHandler for NoEffects {
    fn apply(&self, effect: &Effect, _: &UserContext, _: &InboundMessage) -> Result<BTreeMap<String, String>, String> {
        Err(format!("no handler for effect {}", effect.name))
    }
}

/// Hook for turning voice payloads into text.
pub trait Transcriber: Send + Sync {
    fn transcribe(&self, media: &MediaRef) -> Result<String, String>;
}

/// An effect that ran during a turn, with its output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectRecord {
    pub name: String,
    pub output: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub context: UserContext,
    pub actions: Vec<ChatAction>,
    pub understanding: MessageUnderstanding,
    pub trace: Option<DispatchTrace>,
    pub effects: Vec<EffectRecord>,
    /// Set when the turn fell back to the repair message.
    pub error: Option<EngineError>,
}

pub struct Engine {
    table: RuleTable,
    nlu: Arc<dyn Understander>,
    templates: RwLock<Arc<TemplateTable>>,
    effects: Arc<dyn EffectHandler>,
    transcriber: Option<Arc<dyn Transcriber>>,
    seed: u64,
    history_limit: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("seed", &self.seed)
            .field("history_limit", &self.history_limit)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Fails when a handler references a template the table lacks.
    pub fn new(table: RuleTable, nlu: Arc<dyn Understander>, templates: Arc<TemplateTable>) -> Result<Self, EngineError> {
        table.check_templates(&templates)?;
        Ok(Self {
            table,
            nlu,
            templates: RwLock::new(templates),
            effects: Arc::new(NoEffects),
            transcriber: None,
            seed: 0,
            history_limit: DEFAULT_HISTORY_LIMIT,
        })
    }

    pub fn with_effects(mut self, effects: Arc<dyn EffectHandler>) -> Self {
        self.effects = effects;
        self
    }

    pub fn with_transcriber(mut self, transcriber: Arc<dyn Transcriber>) -> Self {
        self.transcriber = Some(transcriber);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_history_limit(mut self, limit: usize) -> Self {
        self.history_limit = limit;
        self
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }

    pub fn nlu(&self) -> &Arc<dyn Understander> {
        &self.nlu
    }

    pub fn templates(&self) -> Arc<TemplateTable> {
        self.templates.read().expect("template lock").clone()
    }

    /// Swaps in a new template table after checking it covers every handler.
    pub fn replace_templates(&self, templates: TemplateTable) -> Result<(), EngineError> {
        self.table.check_templates(&templates)?;
        *self.templates.write().expect("template lock") = Arc::new(templates);
        Ok(())
    }

    fn understand(&self, inbound: &InboundMessage) -> Result<MessageUnderstanding, EngineError> {
        let today = inbound.timestamp.date_naive();
        Ok(match &inbound.payload {
            Payload::Text(text) => self.nlu.understand(text, today),
            Payload::QuickReply(option) => self.nlu.understand_option(option),
            Payload::Media(media) => self.nlu.understand_media(media.kind),
            Payload::Voice(media) => match &self.transcriber {
                Some(t) => {
                    let text = t.transcribe(media).map_err(EngineError::Transcription)?;
                    self.nlu.understand(&text, today)
                }
                None => self.nlu.understand_media(MediaKind::Audio),
            },
        })
    }

    fn apply_updates(&self, ctx: &mut UserContext, updates: &[ContextUpdate]) -> Result<(), EngineError> {
        let known = |name: &str| {
            if self.table.slots().contains(name) {
                Ok(())
            } else {
                Err(EngineError::UnknownSlot(name.to_owned()))
            }
        };
        for update in updates {
            match update {
                ContextUpdate::SetSlot { name, value, confirmed } => {
                    known(name)?;
                    if ctx.slots.get(name).is_some_and(|s| s.confirmed) {
                        tracing::debug!(slot = %name, "ignoring write to confirmed slot");
                        continue;
                    }
                    ctx.slots.insert(
                        name.clone(),
                        SlotValue {
                            value: value.clone(),
                            confirmed: *confirmed,
                        },
                    );
                }
                ContextUpdate::ConfirmSlot(name) => {
                    known(name)?;
                    if let Some(slot) = ctx.slots.get_mut(name) {
                        slot.confirmed = true;
                    }
                }
                ContextUpdate::ClearSlot(name) => {
                    known(name)?;
                    ctx.slots.remove(name);
                }
                ContextUpdate::ClearSlots => ctx.slots.clear(),
                ContextUpdate::SetFormality(f) => ctx.formality = *f,
                ContextUpdate::SetMood(m) => ctx.mood = *m,
                ContextUpdate::SetUserName(n) => ctx.user_name = Some(n.clone()),
            }
        }
        Ok(())
    }

    fn apply_transitions(ctx: &mut UserContext, transitions: &[Transition], origin: Option<&str>) {
        for t in transitions {
            match t {
                Transition::Layer(s) => ctx.state_queue.push(s.clone()),
                Transition::Replace(s) => {
                    if let Some(origin) = origin {
                        ctx.state_queue.remove(origin);
                    }
                    ctx.state_queue.push(s.clone());
                }
                Transition::Drop(name) => {
                    ctx.state_queue.remove(name);
                }
                Transition::Clear => ctx.state_queue.clear(),
            }
        }
    }

    fn plan_and_realize(
        &self,
        ctx: &mut UserContext,
        understanding: &MessageUnderstanding,
        inbound: &InboundMessage,
    ) -> Result<(Vec<ChatAction>, DispatchTrace, Vec<EffectRecord>), EngineError> {
        let today = inbound.timestamp.date_naive();
        let Dispatched { outcome, trace } = dispatch(ctx, understanding, &self.table, today)?;
        self.apply_updates(ctx, &outcome.updates)?;
        Self::apply_transitions(ctx, &outcome.transitions, trace.state.as_deref());

        let mut effect_output = BTreeMap::new();
        let mut records = Vec::new();
        for effect in &outcome.effects {
            let out = self
                .effects
                .apply(effect, ctx, inbound)
                .map_err(|reason| EngineError::Effect {
                    name: effect.name.clone(),
                    reason,
                })?;
            effect_output.extend(out.clone());
            records.push(EffectRecord {
                name: effect.name.clone(),
                output: out,
            });
        }

        let responder = Responder::new(self.templates());
        let level = ctx.formality.level;
        let actions = outcome
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| responder.realize(a, level, action_seed(self.seed, ctx.turn, i), &effect_output))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((actions, trace, records))
    }

    fn repair_action(&self, level: FormalityLevel, turn: u64) -> ChatAction {
        let templates = self.templates();
        match templates.render(INTERNAL_ERROR_TEMPLATE, level, &BTreeMap::new(), action_seed(self.seed, turn, 0)) {
            Ok(text) => ChatAction::text(text).with_meta("template", INTERNAL_ERROR_TEMPLATE),
            Err(_) => ChatAction::text(INTERNAL_ERROR_TEXT),
        }
    }

    /// Processes one inbound message against `context`.
    pub fn step(&self, context: UserContext, inbound: &InboundMessage) -> StepOutput {
        let snapshot = context.clone();
        let mut ctx = context;
        let mut error = None;

        let understanding = match self.understand(inbound) {
            Ok(u) => u,
            Err(e) => {
                error = Some(e);
                MessageUnderstanding::fallback("", Default::default())
            }
        };

        let mut trace = None;
        let mut effects = Vec::new();
        let mut actions = vec![ChatAction::typing()];
        if error.is_none() {
            if matches!(inbound.payload, Payload::Text(_)) {
                ctx.mood = understanding.sentiment;
            }
            ctx.state_queue.tick(&understanding);
            match self.plan_and_realize(&mut ctx, &understanding, inbound) {
                Ok((realized, t, records)) => {
                    actions.extend(realized);
                    trace = Some(t);
                    effects = records;
                }
                Err(e) => error = Some(e),
            }
        }
        if let Some(e) = &error {
            tracing::warn!(user = %inbound.key, error = %e, "turn failed, sending repair message");
            ctx = snapshot;
            actions.push(self.repair_action(ctx.formality.level, ctx.turn));
        }

        ctx.push_history(
            HistoryEntry {
                timestamp: inbound.timestamp,
                direction: Direction::User,
                summary: format!("intent:{}", understanding.intent),
            },
            self.history_limit,
        );
        for action in &actions {
            let summary = match action.template() {
                Some(t) => format!("action:{}:{t}", action.action.as_str()),
                None => format!("action:{}", action.action.as_str()),
            };
            ctx.push_history(
                HistoryEntry {
                    timestamp: inbound.timestamp,
                    direction: Direction::Bot,
                    summary,
                },
                self.history_limit,
            );
        }
        ctx.turn += 1;

        StepOutput {
            context: ctx,
            actions,
            understanding,
            trace,
            effects,
            error,
        }
    }
}

/// Free-function form of [`Engine::step`].
pub fn step(engine: &Engine, context: UserContext, inbound: &InboundMessage) -> StepOutput {
    engine.step(context, inbound)
}
