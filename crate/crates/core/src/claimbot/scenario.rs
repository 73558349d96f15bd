//! The claim questionnaire as a rule table.
//!
//! While a claim is open the queue holds `CLAIM` (unbounded) plus exactly one
//! transient state saying what the bot just asked: a slot question, a
//! confirmation, the phone-model menu, the final summary or the correction
//! menu. Every handler ends by recomputing the next move from the slots, so a
//! small-talk detour or an expired state always lands back on the questionnaire.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};

use regex::Regex;

use crate::context::SlotValue;
use crate::engine::{
    ContextUpdate, DialogState, Effect, Fill, Handler, HandlerKind, Lifetime, PlanOutcome, PlannedAction, RuleError,
    RuleTable, Text, Transition, TurnInput,
};
use crate::msgmodel::MediaKind;
use crate::nlu::{extract_date, validate_imei, DateError, Language, ParamValue, Sentiment, OPTION_PARAM, QUICK_REPLY_INTENT};
use crate::respond::detect_formality;

use super::claims::{DamageType, CLAIM_ID_KEY, SUBMIT_EFFECT};
use super::phones::{ambiguous_alias, PhoneCatalog};
use super::SLOTS;

pub const CLAIM: &str = "CLAIM";
pub const CONFIRMING: &str = "USER_CONFIRMING_ANSWER";
pub const CLARIFY_PHONE: &str = "CLARIFY_PHONE_MODEL";
pub const CONFIRM_SUBMIT: &str = "CONFIRM_SUBMIT";
pub const CORRECTING: &str = "CORRECTING_FIELD";

const ASK_LIFETIME: u32 = 4;
const CONFIRM_LIFETIME: u32 = 2;
const MENU_LIFETIME: u32 = 3;

/// Intents answered by fallbacks even in the middle of the questionnaire.
pub const SMALL_TALK: [&str; 8] = [
    "greet",
    "help",
    "introduce",
    "joke",
    "smalltalk_how_are_you",
    "smalltalk_who",
    "thanks",
    "bye",
];

const FIX_PREFIX: &str = "fix:";

pub fn ask_state(slot: &str) -> String {
    format!("ASK_{}", slot.to_uppercase())
}

/// Every state the scenario can enter.
pub fn states() -> Vec<String> {
    let mut s: Vec<String> = SLOTS.iter().map(|slot| ask_state(slot)).collect();
    s.extend([CLAIM, CONFIRMING, CLARIFY_PHONE, CONFIRM_SUBMIT, CORRECTING].map(String::from));
    s
}

fn is_transient(name: &str) -> bool {
    name != CLAIM
}

/// Every template id the scenario renders.
pub fn template_ids() -> Vec<String> {
    let mut ids: Vec<String> = [
        "greeting",
        "help",
        "intro_claim",
        "resume",
        "retry_slot",
        "please_confirm",
        "label_yes",
        "label_no",
        "clarify_phone_model",
        "repair_phone_choice",
        "imei_invalid",
        "phone_number_invalid",
        "damage_date_future",
        "summary",
        "claim_submitted",
        "ask_correction",
        "joke",
        "smalltalk_how_are_you",
        "smalltalk_who",
        "thanks",
        "bye",
        "nice_to_meet",
        "nothing_to_confirm",
        "not_understood",
        "media_received",
        "empathy",
        "internal_error",
    ]
    .map(String::from)
    .to_vec();
    for slot in SLOTS {
        ids.push(format!("ask_{slot}"));
        ids.push(format!("repair_{slot}"));
        ids.push(format!("confirm_{slot}"));
        ids.push(format!("field_{slot}"));
    }
    for d in DamageType::ALL {
        ids.push(format!("damage_{d}"));
    }
    ids
}

/// Shared data the callbacks need.
#[derive(Debug)]
struct Scenario {
    phones: Arc<PhoneCatalog>,
    language: Language,
}

enum Move {
    Ask(&'static str),
    Confirm(&'static str),
    Clarify(String),
    Submit,
}

fn next_move(slots: &BTreeMap<String, SlotValue>) -> Move {
    for slot in SLOTS {
        match slots.get(slot) {
            Some(v) if v.confirmed => continue,
            Some(v) => {
                return match ambiguous_alias(&v.value) {
                    Some(alias) if slot == "phone_model" => Move::Clarify(alias.to_owned()),
                    _ => Move::Confirm(slot),
                }
            }
            None => return Move::Ask(slot),
        }
    }
    Move::Submit
}

/// Plan under construction, tracking the slots as they will be after this turn.
struct Draft<'a> {
    input: &'a TurnInput<'a>,
    sc: &'a Scenario,
    slots: BTreeMap<String, SlotValue>,
    out: PlanOutcome,
    claim_open: bool,
}

impl<'a> Draft<'a> {
    fn new(input: &'a TurnInput<'a>, sc: &'a Scenario) -> Self {
        Self {
            input,
            sc,
            slots: input.context.slots.clone(),
            out: PlanOutcome::default(),
            claim_open: input.context.state_queue.contains(CLAIM),
        }
    }

    fn say(&mut self, text: Text) {
        self.out.actions.push(PlannedAction::Say(text));
    }

    fn set(&mut self, slot: &str, value: String, confirmed: bool) {
        if self.slots.get(slot).is_some_and(|s| s.confirmed) {
            return;
        }
        self.slots.insert(
            slot.to_owned(),
            SlotValue {
                value: value.clone(),
                confirmed,
            },
        );
        self.out.updates.push(ContextUpdate::SetSlot {
            name: slot.to_owned(),
            value,
            confirmed,
        });
    }

    fn confirm(&mut self, slot: &str) {
        if let Some(s) = self.slots.get_mut(slot) {
            s.confirmed = true;
            self.out.updates.push(ContextUpdate::ConfirmSlot(slot.to_owned()));
        }
    }

    fn clear(&mut self, slot: &str) {
        self.slots.remove(slot);
        self.out.updates.push(ContextUpdate::ClearSlot(slot.to_owned()));
    }

    /// Opens a fresh claim, forgetting answers from an earlier one.
    fn open_claim(&mut self) {
        self.slots.clear();
        self.out.updates.push(ContextUpdate::ClearSlots);
        self.out.transitions.push(Transition::Clear);
        self.claim_open = false;
    }

    /// Picks up slots mentioned in passing; never overrides an existing value.
    fn capture_extras(&mut self, except: &str) {
        for slot in ["damage_type", "phone_model", "damage_date"] {
            if slot == except || self.slots.contains_key(slot) {
                continue;
            }
            if let Some(v) = self.input.understanding.parameters.get(slot) {
                self.set(slot, v.normalized(), false);
            }
        }
    }

    fn display(&self, slot: &str, value: &str) -> Fill {
        match slot {
            "damage_type" => Fill::Template(format!("damage_{value}")),
            "phone_model" => Fill::Text(self.sc.phones.display_name(value).unwrap_or(value).to_owned()),
            "damage_date" => Fill::Text(format_date(value, self.sc.language)),
            _ => Fill::Text(value.to_owned()),
        }
    }

    fn yes_no(prompt: Text) -> PlannedAction {
        PlannedAction::QuickReplies {
            prompt,
            options: vec![
                ("affirm".into(), Text::template("label_yes")),
                ("deny".into(), Text::template("label_no")),
            ],
        }
    }

    fn ask_action(slot: &str) -> PlannedAction {
        let prompt = Text::template(format!("ask_{slot}"));
        match slot {
            "damage_type" => PlannedAction::QuickReplies {
                prompt,
                options: DamageType::ALL
                    .iter()
                    .map(|d| (d.as_str().to_owned(), Text::template(format!("damage_{d}"))))
                    .collect(),
            },
            _ => PlannedAction::Say(prompt),
        }
    }

    fn clarify_action(&self, alias: &str) -> PlannedAction {
        PlannedAction::QuickReplies {
            prompt: Text::template("clarify_phone_model").fill_text("alias", alias),
            options: self
                .sc
                .phones
                .candidates(alias)
                .iter()
                .map(|m| (m.id.clone(), Text::Literal(m.name.clone())))
                .collect(),
        }
    }

    fn summary_action(&self) -> PlannedAction {
        let mut prompt = Text::template("summary");
        for slot in SLOTS {
            let value = self.slots.get(slot).map(|s| s.value.clone()).unwrap_or_default();
            prompt = prompt.fill(slot, self.display(slot, &value));
        }
        Self::yes_no(prompt)
    }

    /// Asks whatever the questionnaire needs next and moves the queue there.
    fn advance(mut self) -> PlanOutcome {
        for s in self.input.context.state_queue.iter() {
            if is_transient(&s.name) {
                self.out.transitions.push(Transition::Drop(s.name.clone()));
            }
        }
        if !self.claim_open {
            self.out
                .transitions
                .push(Transition::Layer(DialogState::new(CLAIM, Lifetime::Unbounded, 0)));
        }
        let (action, state) = match next_move(&self.slots) {
            Move::Ask(slot) => (
                Self::ask_action(slot),
                DialogState::new(ask_state(slot), Lifetime::Moves(ASK_LIFETIME), 10),
            ),
            Move::Confirm(slot) => {
                let value = self.slots[slot].value.clone();
                let prompt = Text::template(format!("confirm_{slot}")).fill("value", self.display(slot, &value));
                (
                    Self::yes_no(prompt),
                    DialogState::new(CONFIRMING, Lifetime::Moves(CONFIRM_LIFETIME), 20).with("slot", slot),
                )
            }
            Move::Clarify(alias) => (
                self.clarify_action(&alias),
                DialogState::new(CLARIFY_PHONE, Lifetime::Moves(MENU_LIFETIME), 20).with("alias", alias),
            ),
            Move::Submit => (
                self.summary_action(),
                DialogState::new(CONFIRM_SUBMIT, Lifetime::Moves(MENU_LIFETIME), 20),
            ),
        };
        self.out.actions.push(action);
        self.out.transitions.push(Transition::Layer(state));
        self.out
    }

    /// Back to the questionnaire after a detour, if a claim is open.
    fn resume(mut self) -> PlanOutcome {
        if self.claim_open {
            self.say(Text::template("resume"));
            self.advance()
        } else {
            self.out
        }
    }
}

fn format_date(iso: &str, language: Language) -> String {
    match chrono::NaiveDate::parse_from_str(iso, "%Y-%m-%d") {
        Ok(d) => match language {
            Language::De => d.format("%d.%m.%Y").to_string(),
            Language::En => d.format("%B %-d, %Y").to_string(),
        },
        Err(_) => iso.to_owned(),
    }
}

enum Parsed {
    Value(String, bool),
    Invalid(&'static str),
    Nothing,
}

static DIGIT_GROUP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\+?\d(?:[\d \-/]*\d)?").unwrap());
static TWO_WORDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\S+\s+\S+").unwrap());

fn digit_groups(text: &str) -> Vec<(bool, String)> {
    DIGIT_GROUP
        .find_iter(text)
        .map(|m| {
            let s = m.as_str();
            (s.starts_with('+'), s.chars().filter(char::is_ascii_digit).collect())
        })
        .collect()
}

fn option<'i>(input: &'i TurnInput<'_>) -> Option<&'i str> {
    (input.understanding.intent == QUICK_REPLY_INTENT)
        .then(|| input.understanding.text_param(OPTION_PARAM))
        .flatten()
}

fn text_param<'i>(input: &'i TurnInput<'_>, name: &str) -> Option<&'i str> {
    match input.understanding.parameters.get(name) {
        Some(ParamValue::Text(s)) => Some(s),
        _ => None,
    }
}

fn parse_slot(slot: &str, input: &TurnInput<'_>, sc: &Scenario) -> Parsed {
    let raw = input.understanding.raw_text.as_str();
    match slot {
        "damage_type" => {
            if let Some(d) = option(input).and_then(|o| o.parse::<DamageType>().ok()) {
                return Parsed::Value(d.as_str().to_owned(), true);
            }
            match text_param(input, "damage_type") {
                Some(v) => Parsed::Value(v.to_owned(), false),
                None => Parsed::Nothing,
            }
        }
        "phone_model" => {
            if let Some(m) = option(input).and_then(|o| sc.phones.get(o)) {
                return Parsed::Value(m.id.clone(), true);
            }
            match text_param(input, "phone_model") {
                Some(v) => Parsed::Value(v.to_owned(), false),
                None => Parsed::Nothing,
            }
        }
        "phone_number" => {
            let groups = digit_groups(raw);
            if groups.is_empty() || option(input).is_some() {
                return Parsed::Nothing;
            }
            match groups.into_iter().find(|(_, d)| (6..=13).contains(&d.len())) {
                Some((plus, digits)) => Parsed::Value(if plus { format!("+{digits}") } else { digits }, false),
                None => Parsed::Invalid("phone_number_invalid"),
            }
        }
        "imei" => {
            let groups = digit_groups(raw);
            if groups.is_empty() || option(input).is_some() {
                return Parsed::Nothing;
            }
            match groups.into_iter().find(|(_, d)| d.len() == 15 && validate_imei(d)) {
                Some((_, digits)) => Parsed::Value(digits, false),
                None => Parsed::Invalid("imei_invalid"),
            }
        }
        "damage_date" => match extract_date(raw, input.today) {
            Ok(Some(d)) => Parsed::Value(d.format("%Y-%m-%d").to_string(), false),
            Err(DateError::Future(_)) => Parsed::Invalid("damage_date_future"),
            Ok(None) => Parsed::Nothing,
        },
        "event_details" => {
            let trimmed = raw.trim();
            if option(input).is_none() && TWO_WORDS.is_match(trimmed) {
                Parsed::Value(trimmed.to_owned(), false)
            } else {
                Parsed::Nothing
            }
        }
        _ => Parsed::Nothing,
    }
}

/// Handles a message while `slot` is the open question.
fn answer(slot: &str, input: &TurnInput<'_>, sc: &Scenario) -> PlanOutcome {
    let mut d = Draft::new(input, sc);
    match parse_slot(slot, input, sc) {
        Parsed::Value(v, confirmed) => {
            d.set(slot, v, confirmed);
            d.capture_extras(slot);
        }
        Parsed::Invalid(template) => {
            d.capture_extras(slot);
            d.say(Text::template(template));
        }
        Parsed::Nothing => {
            d.capture_extras(slot);
            d.say(Text::template(format!("repair_{slot}")));
        }
    }
    d.advance()
}

fn correction_menu(out: PlanOutcome) -> PlanOutcome {
    out.action(PlannedAction::QuickReplies {
        prompt: Text::template("ask_correction"),
        options: SLOTS
            .iter()
            .map(|s| (format!("{FIX_PREFIX}{s}"), Text::template(format!("field_{s}"))))
            .collect(),
    })
    .transition(Transition::Layer(DialogState::new(
        CORRECTING,
        Lifetime::Moves(MENU_LIFETIME),
        20,
    )))
}

/// Builds the claim scenario's rule table.
pub fn build_scenario(phones: Arc<PhoneCatalog>, language: Language) -> Result<RuleTable, RuleError> {
    let sc = Arc::new(Scenario { phones, language });
    let all_states = states();
    let templates = template_ids();
    let anything = || HandlerKind::regex(r"\S").expect("static regex");

    // Every handler may end up re-asking anything, so all declare the full sets.
    let handler = |id: &str, kind: HandlerKind, f: Box<dyn Fn(&TurnInput<'_>, &Scenario) -> PlanOutcome + Send + Sync>| {
        let sc = Arc::clone(&sc);
        Handler::new(id, kind, move |input| f(input, &sc))
            .targets(all_states.iter().cloned())
            .templates(templates.iter().cloned())
    };

    let mut b = RuleTable::builder().slots(SLOTS);

    // stateless
    b = b.stateless(handler(
        "formality_switch",
        HandlerKind::regex(r"\b(?:[Dd]u|[Dd]ich|[Dd]ir|[Dd]ein\w*|Sie|Ihnen|Ihr\w*)\b").expect("static regex"),
        Box::new(|input, _| match detect_formality(&input.understanding.raw_text) {
            Some(f) if f.level != input.context.formality.level => PlanOutcome::silent().update(ContextUpdate::SetFormality(f)),
            _ => PlanOutcome::silent(),
        }),
    ));
    b = b.stateless(handler(
        "negative_mood",
        HandlerKind::EmojiSentiment(Sentiment::Negative),
        Box::new(|_, _| PlanOutcome::say("empathy")),
    ));

    // questionnaire states
    for slot in SLOTS {
        b = b.on_state(
            ask_state(slot),
            handler(
                &format!("answer_{slot}"),
                anything(),
                Box::new(move |input, sc| answer(slot, input, sc)),
            )
            .except(SMALL_TALK),
        );
    }

    b = b
        .on_state(
            CONFIRMING,
            handler(
                "confirm_yes",
                HandlerKind::affirmation(),
                Box::new(|input, sc| {
                    let mut d = Draft::new(input, sc);
                    if let Some(slot) = input.state.and_then(|s| s.get("slot")) {
                        d.confirm(slot);
                    }
                    d.advance()
                }),
            ),
        )
        .on_state(
            CONFIRMING,
            handler(
                "confirm_no",
                HandlerKind::negation(),
                Box::new(|input, sc| {
                    let mut d = Draft::new(input, sc);
                    if let Some(slot) = input.state.and_then(|s| s.get("slot")) {
                        d.clear(slot);
                    }
                    d.say(Text::template("retry_slot"));
                    d.advance()
                }),
            ),
        )
        .on_state(
            CONFIRMING,
            handler(
                "confirm_other",
                anything(),
                Box::new(|input, sc| {
                    let mut d = Draft::new(input, sc);
                    d.say(Text::template("please_confirm"));
                    d.advance()
                }),
            )
            .except(SMALL_TALK),
        );

    b = b
        .on_state(
            CLARIFY_PHONE,
            handler(
                "clarify_pick",
                HandlerKind::intent([QUICK_REPLY_INTENT]).requiring(OPTION_PARAM),
                Box::new(|input, sc| {
                    let mut d = Draft::new(input, sc);
                    if let Some(m) = option(input).and_then(|o| sc.phones.get(o)) {
                        d.set("phone_model", m.id.clone(), true);
                    } else {
                        d.say(Text::template("repair_phone_choice"));
                    }
                    d.advance()
                }),
            ),
        )
        .on_state(
            CLARIFY_PHONE,
            handler(
                "clarify_text",
                anything(),
                Box::new(|input, sc| {
                    let mut d = Draft::new(input, sc);
                    let alias = input.state.and_then(|s| s.get("alias")).unwrap_or_default();
                    let candidates = sc.phones.candidates(alias);
                    let by_number = input
                        .understanding
                        .raw_text
                        .trim()
                        .parse::<usize>()
                        .ok()
                        .and_then(|n| n.checked_sub(1))
                        .and_then(|i| candidates.get(i));
                    match (by_number, text_param(input, "phone_model")) {
                        (Some(m), _) => d.set("phone_model", m.id.clone(), true),
                        (None, Some(v)) if ambiguous_alias(v).is_none() => d.set("phone_model", v.to_owned(), false),
                        _ => d.say(Text::template("repair_phone_choice")),
                    }
                    d.advance()
                }),
            )
            .except(SMALL_TALK),
        );

    b = b
        .on_state(
            CONFIRM_SUBMIT,
            handler(
                "submit",
                HandlerKind::affirmation(),
                Box::new(|input, sc| {
                    let d = Draft::new(input, sc);
                    // stale summary, e.g. a field was cleared since: keep asking
                    if !matches!(next_move(&d.slots), Move::Submit) {
                        return d.advance();
                    }
                    PlanOutcome::silent()
                        .effect(Effect::new(SUBMIT_EFFECT))
                        .then_say(Text::template("claim_submitted").fill(CLAIM_ID_KEY, Fill::Effect(CLAIM_ID_KEY.into())))
                        .transition(Transition::Clear)
                }),
            ),
        )
        .on_state(
            CONFIRM_SUBMIT,
            handler(
                "submit_change",
                HandlerKind::negation(),
                Box::new(|_, _| correction_menu(PlanOutcome::silent().transition(Transition::Drop(CONFIRM_SUBMIT.into())))),
            ),
        )
        .on_state(
            CONFIRM_SUBMIT,
            handler(
                "submit_other",
                anything(),
                Box::new(|input, sc| {
                    let mut d = Draft::new(input, sc);
                    d.say(Text::template("please_confirm"));
                    d.advance()
                }),
            )
            .except(SMALL_TALK),
        );

    b = b
        .on_state(
            CORRECTING,
            handler(
                "correct_pick",
                HandlerKind::intent([QUICK_REPLY_INTENT]).requiring(OPTION_PARAM),
                Box::new(|input, sc| {
                    let field = option(input)
                        .and_then(|o| o.strip_prefix(FIX_PREFIX))
                        .and_then(|f| SLOTS.iter().find(|s| **s == f));
                    match field {
                        Some(slot) => {
                            let mut d = Draft::new(input, sc);
                            d.clear(slot);
                            d.advance()
                        }
                        None => correction_menu(PlanOutcome::say("not_understood")),
                    }
                }),
            ),
        )
        .on_state(
            CORRECTING,
            handler(
                "correct_other",
                anything(),
                Box::new(|_, _| correction_menu(PlanOutcome::say("not_understood"))),
            )
            .except(SMALL_TALK),
        );

    // the claim itself: picks up the open question when its state has expired
    b = b.on_state(
        CLAIM,
        handler(
            "claim_resume",
            anything(),
            Box::new(|input, sc| match next_move(&input.context.slots) {
                Move::Ask(slot) => answer(slot, input, sc),
                _ => {
                    let mut d = Draft::new(input, sc);
                    d.capture_extras("");
                    d.advance()
                }
            }),
        )
        .except(SMALL_TALK),
    );

    // fallbacks, in order
    let detour = |template: &'static str| -> Box<dyn Fn(&TurnInput<'_>, &Scenario) -> PlanOutcome + Send + Sync> {
        Box::new(move |input, sc| {
            let mut d = Draft::new(input, sc);
            d.say(Text::template(template));
            d.resume()
        })
    };
    b = b
        .fallback(handler(
            "media",
            HandlerKind::media([MediaKind::Image, MediaKind::Audio, MediaKind::Other]),
            detour("media_received"),
        ))
        .fallback(handler(
            "start_claim",
            HandlerKind::intent(["report_claim", "phone_broken", "inform"]),
            Box::new(|input, sc| {
                let mut d = Draft::new(input, sc);
                d.open_claim();
                d.capture_extras("");
                d.say(Text::template("intro_claim"));
                d.advance()
            }),
        ))
        .fallback(handler("greet", HandlerKind::intent(["greet"]), detour("greeting")))
        .fallback(handler("help", HandlerKind::intent(["help"]), detour("help")))
        .fallback(handler(
            "introduce",
            HandlerKind::intent(["introduce"]).requiring("user_name"),
            Box::new(|input, sc| {
                let mut d = Draft::new(input, sc);
                let name = text_param(input, "user_name").unwrap_or_default().to_owned();
                d.out.updates.push(ContextUpdate::SetUserName(name.clone()));
                d.say(Text::template("nice_to_meet").fill_text("name", name));
                d.resume()
            }),
        ))
        .fallback(handler("joke", HandlerKind::intent(["joke"]), detour("joke")))
        .fallback(handler(
            "how_are_you",
            HandlerKind::intent(["smalltalk_how_are_you"]),
            detour("smalltalk_how_are_you"),
        ))
        .fallback(handler("who", HandlerKind::intent(["smalltalk_who"]), detour("smalltalk_who")))
        .fallback(handler("thanks", HandlerKind::intent(["thanks"]), detour("thanks")))
        .fallback(handler("bye", HandlerKind::intent(["bye"]), Box::new(|_, _| PlanOutcome::say("bye"))))
        .fallback(handler(
            "stray_answer",
            HandlerKind::intent(["affirm", "deny"]),
            detour("nothing_to_confirm"),
        ))
        .fallback(handler(
            "catch_all",
            HandlerKind::regex("").expect("static regex"),
            detour("not_understood"),
        ));

    b.build()
}
