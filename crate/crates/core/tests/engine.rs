mod common;

use std::sync::Arc;

use claimchat_core::engine::{
    ContextUpdate, DialogState, Handler, HandlerKind, Lifetime, PlanOutcome, RuleTable, Transition,
};
use claimchat_core::msgmodel::ActionKind;
use claimchat_core::{Engine, EngineError, UserContext};
use common::*;

#[test]
fn stateless_merges_with_state_handler() {
    let r = fixture_stateless_merges();
    assert!(r.ok, "{}", r.detail);
}

#[test]
fn state_match_shadows_fallback() {
    let r = fixture_fallback_shadowed();
    assert!(r.ok, "{}", r.detail);
}

#[test]
fn priority_then_recency() {
    let r = fixture_priority_wins();
    assert!(r.ok, "{}", r.detail);
}

#[test]
fn lifetimes_match_oracle() {
    lifetime_trials(200, 11).unwrap();
}

#[test]
fn oracle_counts_only_understood_messages() {
    let mut o = LifetimeOracle::default();
    o.message(true);
    o.push("A", Some(2), 0);
    o.message(false);
    o.message(true);
    assert_eq!(o.active(), ["A"]);
    o.message(true);
    assert!(o.active().is_empty());
}

fn rogue_engine() -> Engine {
    let table = RuleTable::builder()
        .terminal("KNOWN")
        .slots(["colour"])
        .fallback(
            Handler::new("set", HandlerKind::intent(["set"]), |input| {
                let v = input.understanding.text_param("v").unwrap_or("red").to_owned();
                PlanOutcome::say("ok")
                    .update(ContextUpdate::SetSlot {
                        name: "colour".into(),
                        value: v,
                        confirmed: false,
                    })
                    .transition(Transition::Layer(DialogState::new("KNOWN", Lifetime::Moves(3), 0)))
            })
            .targets(["KNOWN"])
            .templates(["ok"]),
        )
        .fallback(
            Handler::new("lock", HandlerKind::intent(["lock"]), |_| {
                PlanOutcome::say("ok").update(ContextUpdate::ConfirmSlot("colour".into()))
            })
            .templates(["ok"]),
        )
        .fallback(
            Handler::new("rogue", HandlerKind::intent(["rogue"]), |_| {
                PlanOutcome::say("ok")
                    .update(ContextUpdate::SetSlot {
                        name: "colour".into(),
                        value: "green".into(),
                        confirmed: false,
                    })
                    .transition(Transition::Layer(DialogState::new("SECRET", Lifetime::Unbounded, 0)))
            })
            .targets(["KNOWN"])
            .templates(["ok"]),
        )
        .fallback(Handler::new("catch_all", HandlerKind::regex("").unwrap(), |_| PlanOutcome::silent()))
        .build()
        .unwrap();
    Engine::new(
        table,
        ScriptedNlu::new(["set", "lock", "rogue"]),
        Arc::new(echo_templates(["ok", "internal_error"])),
    )
    .unwrap()
}

#[test]
fn undeclared_transition_rolls_back() {
    let engine = rogue_engine();
    let user = key("u");
    let out = engine.step(UserContext::new(user.clone()), &text_msg(&user, 0, "set v=blue"));
    assert!(out.error.is_none());
    let before = out.context;
    let out = engine.step(before.clone(), &text_msg(&user, 1, "rogue"));
    assert!(matches!(
        out.error,
        Some(EngineError::UndeclaredTransition { ref handler, ref state }) if handler == "rogue" && state == "SECRET"
    ));
    assert_eq!(out.context.slots, before.slots);
    assert_eq!(out.context.state_queue, before.state_queue);
    assert_eq!(out.context.turn, before.turn + 1);
    let last = out.actions.last().unwrap();
    assert_eq!(last.template(), Some("internal_error"));
    assert_eq!(out.actions[0].action, ActionKind::SendTyping);
}

#[test]
fn confirmed_slots_are_not_overwritten() {
    let engine = rogue_engine();
    let user = key("u");
    let mut ctx = UserContext::new(user.clone());
    for (n, text) in ["set v=blue", "lock", "set v=pink"].iter().enumerate() {
        ctx = engine.step(ctx, &text_msg(&user, n, text)).context;
    }
    let slot = ctx.slot("colour").unwrap();
    assert_eq!(slot.value, "blue");
    assert!(slot.confirmed);
}

#[test]
fn not_understood_message_keeps_lifetimes() {
    let engine = rogue_engine();
    let user = key("u");
    let mut ctx = engine.step(UserContext::new(user.clone()), &text_msg(&user, 0, "set")).context;
    assert_eq!(ctx.state_queue.get("KNOWN").unwrap().lifetime, Lifetime::Moves(3));
    ctx = engine.step(ctx, &text_msg(&user, 1, "gibberish")).context;
    assert_eq!(ctx.state_queue.get("KNOWN").unwrap().lifetime, Lifetime::Moves(3));
    ctx = engine.step(ctx, &text_msg(&user, 2, "lock")).context;
    assert_eq!(ctx.state_queue.get("KNOWN").unwrap().lifetime, Lifetime::Moves(2));
}

#[test]
fn history_records_turns() {
    let engine = rogue_engine();
    let user = key("u");
    let out = engine.step(UserContext::new(user.clone()), &text_msg(&user, 0, "set"));
    let summaries: Vec<&str> = out.context.history.iter().map(|h| h.summary.as_str()).collect();
    assert_eq!(summaries, ["intent:set", "action:send_typing", "action:send_text:ok"]);
}
