use chrono::NaiveDate;
use serde::Serialize;

use crate::context::UserContext;
use crate::nlu::MessageUnderstanding;

use super::handler::{Handler, TurnInput};
use super::plan::PlanOutcome;
use super::rules::{RuleTable, Tier};
use super::state::DialogState;
use super::EngineError;

/// Which rules produced an outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DispatchTrace {
    /// Stateless handlers that fired, in order.
    pub stateless: Vec<String>,
    pub handler: String,
    pub tier: Tier,
    /// State whose handler list supplied the decisive handler.
    pub state: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dispatched {
    pub outcome: PlanOutcome,
    pub trace: DispatchTrace,
}

/// First non-stateless handler that matches, in evaluation order: active
/// states by queue order, then fallbacks.
pub fn decisive_match<'t, 'q>(
    table: &'t RuleTable,
    states: impl IntoIterator<Item = &'q DialogState>,
    u: &MessageUnderstanding,
) -> Option<(Tier, Option<&'q DialogState>, &'t Handler)> {
    for state in states {
        if let Some(h) = table.state_handlers(&state.name).iter().find(|h| h.matches(u)) {
            return Some((Tier::State, Some(state), h));
        }
    }
    table
        .fallbacks()
        .iter()
        .find(|h| h.matches(u))
        .map(|h| (Tier::Fallback, None, h))
}

fn checked_call(handler: &Handler, input: &TurnInput<'_>) -> Result<PlanOutcome, EngineError> {
    let outcome = handler.call(input);
    if let Some(target) = outcome
        .transitions
        .iter()
        .filter_map(|t| t.target())
        .find(|t| !handler.targets.contains(*t))
    {
        return Err(EngineError::UndeclaredTransition {
            handler: handler.id.clone(),
            state: target.to_owned(),
        });
    }
    Ok(outcome)
}

/// Runs every matching stateless handler, then the first matching state
/// handler (states in queue order) or, failing that, the first matching
/// fallback. Stateless outcomes come first in the merged result.
pub fn dispatch(
    context: &UserContext,
    understanding: &MessageUnderstanding,
    table: &RuleTable,
    today: NaiveDate,
) -> Result<Dispatched, EngineError> {
    let mut outcome = PlanOutcome::default();
    let mut fired = Vec::new();
    for h in table.stateless().iter().filter(|h| h.matches(understanding)) {
        let input = TurnInput {
            context,
            understanding,
            state: None,
            today,
        };
        outcome = outcome.merge(checked_call(h, &input)?);
        fired.push(h.id.clone());
    }

    let (tier, state, handler) =
        decisive_match(table, context.state_queue.iter(), understanding).ok_or(EngineError::NoHandler)?;
    let input = TurnInput {
        context,
        understanding,
        state,
        today,
    };
    outcome = outcome.merge(checked_call(handler, &input)?);
    Ok(Dispatched {
        outcome,
        trace: DispatchTrace {
            stateless: fired,
            handler: handler.id.clone(),
            tier,
            state: state.map(|s| s.name.clone()),
        },
    })
}
