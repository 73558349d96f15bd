#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use claimchat_core::engine::{
    dispatch, DialogState, Handler, HandlerKind, Lifetime, PlanOutcome, RuleTable, StateQueue, Tier, Transition,
};
use claimchat_core::msgmodel::{InboundMessage, UserKey};
use claimchat_core::nlu::{MessageUnderstanding, ParamValue, Understander};
use claimchat_core::{TemplateTable, UserContext};

/// Test NLU: `"intent k=v k2=v2"` becomes that intent with text params.
/// `"???"` and empty text are not understood.
pub struct ScriptedNlu {
    pub intents: BTreeSet<String>,
}

impl ScriptedNlu {
    pub fn new<I: IntoIterator<Item = &'static str>>(intents: I) -> Arc<Self> {
        Arc::new(Self {
            intents: intents.into_iter().map(String::from).collect(),
        })
    }
}

impl Understander for ScriptedNlu {
    fn understand(&self, text: &str, _reference: NaiveDate) -> MessageUnderstanding {
        let mut words = text.split_whitespace();
        let Some(intent) = words.next().filter(|w| self.intents.contains(*w)) else {
            return MessageUnderstanding::fallback(text, Default::default());
        };
        let mut u = MessageUnderstanding::with_intent(intent);
        u.raw_text = text.to_owned();
        for w in words {
            if let Some((k, v)) = w.split_once('=') {
                u = u.param(k, ParamValue::Text(v.to_owned()));
            }
        }
        u
    }

    fn is_intent(&self, name: &str) -> bool {
        self.intents.contains(name)
    }
}

/// Template table where every id renders as its own name.
pub fn echo_templates<'a>(ids: impl IntoIterator<Item = &'a str>) -> TemplateTable {
    let src: String = ids.into_iter().map(|id| format!("[{id}]\ntext = \"{id}\"\n")).collect();
    TemplateTable::from_toml(&src).unwrap()
}

pub fn key(user: &str) -> UserKey {
    UserKey::new("test", user).unwrap()
}

pub fn t0() -> DateTime<Utc> {
    "2026-10-17T09:00:00Z".parse().unwrap()
}

pub fn text_msg(user: &UserKey, n: usize, text: &str) -> InboundMessage {
    InboundMessage::text(user.clone(), format!("m{n}"), t0() + Duration::seconds(30 * n as i64), text).unwrap()
}

pub fn today() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 10, 17).unwrap()
}

pub fn ctx_with_states(states: Vec<DialogState>) -> UserContext {
    let mut ctx = UserContext::new(key("u"));
    ctx.state_queue = states.into_iter().collect::<StateQueue>();
    ctx
}

fn say(id: &'static str) -> impl Fn(&claimchat_core::engine::TurnInput<'_>) -> PlanOutcome + Send + Sync {
    move |_| PlanOutcome::say(id)
}

fn catch_all() -> Handler {
    Handler::new("catch_all", HandlerKind::regex("").unwrap(), say("fb")).templates(["fb"])
}

/// Result of one dispatch fixture: whether it held, and what was seen.
pub struct FixtureResult {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// Stateless match plus state match: both outcomes, stateless first.
pub fn fixture_stateless_merges() -> FixtureResult {
    let table = RuleTable::builder()
        .stateless(Handler::new("mood", HandlerKind::intent(["x"]), say("s")).templates(["s"]))
        .on_state("A", Handler::new("a_x", HandlerKind::intent(["x"]), say("a")).templates(["a"]))
        .fallback(catch_all())
        .build()
        .unwrap();
    let ctx = ctx_with_states(vec![DialogState::new("A", Lifetime::Moves(3), 0)]);
    let d = dispatch(&ctx, &MessageUnderstanding::with_intent("x"), &table, today()).unwrap();
    let said: Vec<&str> = d.outcome.actions.iter().flat_map(|a| a.template_ids()).collect();
    let ok = said == ["s", "a"] && d.trace.stateless == ["mood"] && d.trace.handler == "a_x" && d.trace.tier == Tier::State;
    FixtureResult {
        name: "stateless merged with state handler",
        ok,
        detail: format!("said {said:?}, trace {:?}", d.trace),
    }
}

/// A matching state handler shadows every fallback; the fallback callback is
/// never even invoked.
pub fn fixture_fallback_shadowed() -> FixtureResult {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let table = RuleTable::builder()
        .on_state("A", Handler::new("a_any", HandlerKind::any_intent(), say("a")).templates(["a"]))
        .fallback(
            Handler::new("fb_any", HandlerKind::any_intent(), move |_| {
                seen.fetch_add(1, Ordering::SeqCst);
                PlanOutcome::say("fb")
            })
            .templates(["fb"]),
        )
        .fallback(catch_all())
        .build()
        .unwrap();
    let ctx = ctx_with_states(vec![DialogState::new("A", Lifetime::Unbounded, 0)]);
    let mut handlers = Vec::new();
    for intent in ["x", "y", "affirm", "deny"] {
        let d = dispatch(&ctx, &MessageUnderstanding::with_intent(intent), &table, today()).unwrap();
        handlers.push(d.trace.handler);
    }
    let ok = calls.load(Ordering::SeqCst) == 0 && handlers.iter().all(|h| h == "a_any");
    FixtureResult {
        name: "fallback never fires when a state handler matches",
        ok,
        detail: format!("handlers {handlers:?}, fallback calls {}", calls.load(Ordering::SeqCst)),
    }
}

/// Two states handle the same intent: the higher priority one wins, and at
/// equal priority the more recently added one.
pub fn fixture_priority_wins() -> FixtureResult {
    let table = RuleTable::builder()
        .on_state("LOW", Handler::new("low_x", HandlerKind::intent(["x"]), say("low")).templates(["low"]))
        .on_state("HIGH", Handler::new("high_x", HandlerKind::intent(["x"]), say("high")).templates(["high"]))
        .on_state("HIGH2", Handler::new("high2_x", HandlerKind::intent(["x"]), say("high")).templates(["high"]))
        .fallback(catch_all())
        .build()
        .unwrap();
    let u = MessageUnderstanding::with_intent("x");
    // HIGH pushed first, LOW later: priority beats recency
    let a = ctx_with_states(vec![
        DialogState::new("HIGH", Lifetime::Moves(2), 20),
        DialogState::new("LOW", Lifetime::Moves(2), 10),
    ]);
    let first = dispatch(&a, &u, &table, today()).unwrap().trace.handler;
    let b = ctx_with_states(vec![
        DialogState::new("HIGH", Lifetime::Moves(2), 20),
        DialogState::new("HIGH2", Lifetime::Moves(2), 20),
        DialogState::new("LOW", Lifetime::Unbounded, 10),
    ]);
    let second = dispatch(&b, &u, &table, today()).unwrap().trace.handler;
    let ok = first == "high_x" && second == "high2_x";
    FixtureResult {
        name: "higher-priority state wins",
        ok,
        detail: format!("got {first} and {second}"),
    }
}

pub fn dispatch_fixtures() -> Vec<FixtureResult> {
    vec![fixture_stateless_merges(), fixture_fallback_shadowed(), fixture_priority_wins()]
}

/// Brute-force reference for layered-state lifetimes: keeps the full push
/// history and recomputes the active set from scratch.
#[derive(Debug, Default)]
pub struct LifetimeOracle {
    pushes: Vec<Push>,
    /// understood (non-fallback) flag per message so far
    understood: Vec<bool>,
}

#[derive(Debug, Clone)]
struct Push {
    name: String,
    moves: Option<u32>,
    priority: i32,
    at_message: usize,
    order: usize,
    removed: bool,
}

impl LifetimeOracle {
    /// Starts message number `understood.len()`.
    pub fn message(&mut self, understood: bool) {
        self.understood.push(understood);
    }

    fn current(&self) -> usize {
        self.understood.len() - 1
    }

    pub fn push(&mut self, name: &str, moves: Option<u32>, priority: i32) {
        self.drop(name);
        let order = self.pushes.len();
        self.pushes.push(Push {
            name: name.to_owned(),
            moves,
            priority,
            at_message: self.current(),
            order,
            removed: false,
        });
    }

    pub fn drop(&mut self, name: &str) {
        for p in &mut self.pushes {
            if p.name == name {
                p.removed = true;
            }
        }
    }

    /// Active states after the current message, in dispatch order.
    pub fn active(&self) -> Vec<String> {
        let now = self.current();
        let mut live: Vec<&Push> = self
            .pushes
            .iter()
            .filter(|p| !p.removed)
            .filter(|p| match p.moves {
                None => true,
                Some(n) => {
                    let ticks = self.understood[p.at_message + 1..=now].iter().filter(|u| **u).count();
                    (ticks as u32) < n
                }
            })
            .collect();
        live.sort_by(|a, b| b.priority.cmp(&a.priority).then(b.order.cmp(&a.order)));
        live.into_iter().map(|p| p.name.clone()).collect()
    }
}

/// Twenty messages that stay short of submitting a claim.
pub fn user_conversation(user: usize) -> Vec<String> {
    vec![
        "Hello".into(),
        "I want to report a claim".into(),
        "screen".into(),
        "yes".into(),
        "Tell me a joke".into(),
        "Pixel 8".into(),
        "yes".into(),
        format!("0171 555{user:04}"),
        "yes".into(),
        "490154203237518".into(),
        "yes".into(),
        "yesterday".into(),
        "no".into(),
        format!("{} days ago", 2 + user % 5),
        "yes".into(),
        "It fell on the floor in the kitchen".into(),
        "no".into(),
        "It fell off the kitchen table".into(),
        "yes".into(),
        "thanks".into(),
    ]
}

const POOL: [&str; 5] = ["S0", "S1", "S2", "S3", "S4"];

/// Engine whose fallbacks push and drop states on command:
/// `push name=S1 moves=3 prio=10` (moves=u for unbounded), `drop name=S1`,
/// `noop`; anything else is not understood.
pub fn lifetime_engine() -> claimchat_core::Engine {
    let push = Handler::new("push", HandlerKind::intent(["push"]).requiring("name"), |input| {
        let u = input.understanding;
        let name = u.text_param("name").unwrap_or("S0");
        let lifetime = match u.text_param("moves") {
            Some("u") | None => Lifetime::Unbounded,
            Some(n) => Lifetime::Moves(n.parse().unwrap()),
        };
        let prio = u.text_param("prio").and_then(|p| p.parse().ok()).unwrap_or(0);
        PlanOutcome::silent().transition(Transition::Layer(DialogState::new(name, lifetime, prio)))
    })
    .targets(POOL);
    let drop = Handler::new("drop", HandlerKind::intent(["drop"]).requiring("name"), |input| {
        PlanOutcome::silent().transition(Transition::Drop(input.understanding.text_param("name").unwrap().to_owned()))
    });
    let noop = Handler::new("noop", HandlerKind::intent(["noop"]), |_| PlanOutcome::silent());
    let mut b = RuleTable::builder().fallback(push).fallback(drop).fallback(noop).fallback(
        Handler::new("catch_all", HandlerKind::regex("").unwrap(), |_| PlanOutcome::silent()),
    );
    for s in POOL {
        b = b.terminal(s);
    }
    claimchat_core::Engine::new(
        b.build().unwrap(),
        ScriptedNlu::new(["push", "drop", "noop"]),
        Arc::new(echo_templates(["internal_error"])),
    )
    .unwrap()
}

/// Random command sequences through the engine, compared after every message
/// with [`LifetimeOracle`]. Returns the first divergence.
pub fn lifetime_trials(trials: usize, seed: u64) -> Result<usize, String> {
    use rand::{Rng, SeedableRng};
    let engine = lifetime_engine();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut messages = 0;
    for trial in 0..trials {
        let user = key(&format!("trial{trial}"));
        let mut ctx = UserContext::new(user.clone());
        let mut oracle = LifetimeOracle::default();
        let len = rng.gen_range(5..40);
        for n in 0..len {
            let name = POOL[rng.gen_range(0..POOL.len())];
            let roll = rng.gen_range(0..100);
            let (text, understood) = if roll < 45 {
                let moves = match rng.gen_range(0..7) {
                    0 => "u".to_owned(),
                    k => k.to_string(),
                };
                let prio = [0, 10, 20][rng.gen_range(0..3)];
                (format!("push name={name} moves={moves} prio={prio}"), true)
            } else if roll < 55 {
                (format!("drop name={name}"), true)
            } else if roll < 75 {
                ("noop".to_owned(), true)
            } else {
                ("???".to_owned(), false)
            };
            oracle.message(understood);
            if let Some(rest) = text.strip_prefix("push ") {
                let get = |k: &str| {
                    rest.split(' ')
                        .find_map(|kv| kv.strip_prefix(&format!("{k}=")))
                        .unwrap()
                        .to_owned()
                };
                let moves = get("moves");
                oracle.push(&get("name"), (moves != "u").then(|| moves.parse().unwrap()), get("prio").parse().unwrap());
            } else if text.starts_with("drop ") {
                oracle.drop(name);
            }
            let out = engine.step(ctx, &text_msg(&user, n, &text));
            if let Some(e) = out.error {
                return Err(format!("trial {trial} message {n}: engine error {e}"));
            }
            ctx = out.context;
            let got: Vec<String> = ctx.state_queue.names().into_iter().map(String::from).collect();
            let want = oracle.active();
            if got != want {
                return Err(format!("trial {trial} message {n} ({text}): queue {got:?}, oracle {want:?}"));
            }
            messages += 1;
        }
    }
    Ok(messages)
}
