//! Scripted conversations replayed against the bot, with two ways of checking
//! them: exact comparison against a recorded transcript, or per-turn
//! predicates that survive copy edits to the templates.
//!
//! Script format (TOML):
//!
//! ```toml
//! name = "happy_path"
//! description = "Reports a cracked display without detours."
//! language = "en"                      # optional, default en
//! start = "2026-10-17T09:00:00Z"       # timestamp of the first message
//! step_seconds = 30                    # optional
//!
//! [[turn]]
//! say = "My phone's display is broken"  # or option = "affirm", or media = "image"
//! [turn.expect]
//! intent = "phone_broken"
//! handler = "start_claim"
//! states = ["USER_CONFIRMING_ANSWER", "CLAIM"]
//! absent_states = ["ASK_DAMAGE_TYPE"]
//! slots = { damage_type = "display_damage" }
//! confirmed = ["damage_type"]
//! templates = ["confirm_damage_type"]
//! options = ["affirm", "deny"]
//! formality = "formal"
//! completed = true
//! ```
//!
//! The recorded transcript for exact mode lives next to the script as
//! `<stem>.golden.json`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claimbot::{BotError, ClaimBot, MemorySink, SUBMIT_EFFECT};
use crate::context::{ContextStore, MemoryStore, StoreError};
use crate::engine::Engine;
use crate::msgmodel::{ChatAction, InboundMessage, MediaKind, MediaRef, Payload, UserKey};
use crate::nlu::Language;
use crate::respond::{FormalityLevel, TemplateError, TemplateTable};

pub const REPLAY_CHANNEL: &str = "replay";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("script {name}: {reason}")]
    InvalidScript { name: String, reason: String },
    #[error("empty suite")]
    EmptySuite,
    #[error(transparent)]
    Bot(#[from] BotError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn io_error(path: &Path, e: impl fmt::Display) -> ReplayError {
    ReplayError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Predicate,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Mode::Exact),
            "predicate" => Ok(Mode::Predicate),
            other => Err(format!("unknown mode {other:?}, expected exact or predicate")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub intent: Option<String>,
    pub handler: Option<String>,
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub absent_states: Vec<String>,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
    #[serde(default)]
    pub absent_slots: Vec<String>,
    #[serde(default)]
    pub confirmed: Vec<String>,
    #[serde(default)]
    pub templates: Vec<String>,
    pub options: Option<Vec<String>>,
    pub formality: Option<FormalityLevel>,
    pub completed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub say: Option<String>,
    pub option: Option<String>,
    pub media: Option<MediaKind>,
    #[serde(default)]
    pub expect: Expect,
}

impl Turn {
    pub fn payload(&self) -> Result<Payload, String> {
        match (&self.say, &self.option, self.media) {
            (Some(t), None, None) => Ok(Payload::Text(t.clone())),
            (None, Some(o), None) => Ok(Payload::QuickReply(o.clone())),
            (None, None, Some(kind)) => Ok(Payload::Media(MediaRef {
                kind,
                uri: format!("file:///replay/upload.{}", kind.as_str()),
            })),
            _ => Err("each turn needs exactly one of say, option, media".into()),
        }
    }
}

fn default_step() -> i64 {
    30
}

fn default_language() -> Language {
    Language::En
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_language")]
    pub language: Language,
    pub start: DateTime<Utc>,
    #[serde(default = "default_step")]
    pub step_seconds: i64,
    #[serde(rename = "turn")]
    pub turns: Vec<Turn>,
}

impl Script {
    pub fn from_toml(src: &str) -> Result<Self, ReplayError> {
        let script: Script = toml::from_str(src).map_err(|e| ReplayError::InvalidScript {
            name: "?".into(),
            reason: e.to_string(),
        })?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let invalid = |reason: String| ReplayError::InvalidScript {
            name: self.name.clone(),
            reason,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("empty name".into()));
        }
        if self.turns.is_empty() {
            return Err(invalid("no turns".into()));
        }
        if self.step_seconds < 0 {
            return Err(invalid("negative step_seconds".into()));
        }
        for (i, t) in self.turns.iter().enumerate() {
            t.payload().map_err(|e| invalid(format!("turn {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn user_key(&self) -> UserKey {
        UserKey::new(REPLAY_CHANNEL, &self.name).expect("validated name")
    }

    pub fn message(&self, index: usize) -> InboundMessage {
        let ts = self.start + Duration::seconds(self.step_seconds * index as i64);
        let payload = self.turns[index].payload().expect("validated turn");
        InboundMessage::new(self.user_key(), format!("{}-{}", self.name, index + 1), ts, payload)
            .expect("validated message")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenTurn {
    pub input: Payload,
    pub actions: Vec<ChatAction>,
}

/// Recorded bot output for a script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Golden {
    pub script: String,
    pub turns: Vec<GoldenTurn>,
}

impl Golden {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("golden serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub turn: usize,
    pub check: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptReport {
    pub name: String,
    pub mode: Mode,
    pub turns: usize,
    pub completed: bool,
    pub fallback_turns: usize,
    pub engine_errors: usize,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ScriptReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// One finished run of a script: the transcript plus what happened per turn.
#[derive(Debug, Clone)]
pub struct Run {
    pub transcript: Golden,
    pub completed: bool,
    turn_facts: Vec<TurnFacts>,
}

#[derive(Debug, Clone)]
struct TurnFacts {
    intent: String,
    handler: Option<String>,
    states: Vec<String>,
    slots: BTreeMap<String, (String, bool)>,
    formality: FormalityLevel,
    completed: bool,
    error: bool,
}

/// Runs `script` turn by turn against a fresh in-memory store.
pub fn run_script(script: &Script, engine: &Engine) -> Result<Run, ReplayError> {
    let store = MemoryStore::new();
    let key = script.user_key();
    let mut turns = Vec::with_capacity(script.turns.len());
    let mut facts = Vec::with_capacity(script.turns.len());
    let mut completed = false;
    for i in 0..script.turns.len() {
        let msg = script.message(i);
        let ctx = store.load_or_create(&key)?;
        let out = engine.step(ctx, &msg);
        store.save(&out.context)?;
        let done = out.effects.iter().any(|e| e.name == SUBMIT_EFFECT);
        completed |= done;
        facts.push(TurnFacts {
            intent: out.understanding.intent.clone(),
            handler: out.trace.as_ref().map(|t| t.handler.clone()),
            states: out.context.state_queue.names().into_iter().map(String::from).collect(),
            slots: out
                .context
                .slots
                .iter()
                .map(|(k, v)| (k.clone(), (v.value.clone(), v.confirmed)))
                .collect(),
            formality: out.context.formality.level,
            completed: done,
            error: out.error.is_some(),
        });
        turns.push(GoldenTurn {
            input: msg.payload,
            actions: out.actions,
        });
    }
    Ok(Run {
        transcript: Golden {
            script: script.name.clone(),
            turns,
        },
        completed,
        turn_facts: facts,
    })
}

fn check(turn: usize, name: impl Into<String>, passed: bool, detail: impl FnOnce() -> String) -> CheckResult {
    CheckResult {
        turn,
        check: name.into(),
        passed,
        detail: (!passed).then(detail),
    }
}

fn predicate_checks(turn: usize, expect: &Expect, facts: &TurnFacts, actions: &[ChatAction]) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if let Some(intent) = &expect.intent {
        out.push(check(turn, format!("intent {intent}"), facts.intent == *intent, || {
            format!("got {}", facts.intent)
        }));
    }
    if let Some(h) = &expect.handler {
        out.push(check(turn, format!("handler {h}"), facts.handler.as_deref() == Some(h), || {
            format!("got {:?}", facts.handler)
        }));
    }
    for s in &expect.states {
        out.push(check(turn, format!("state {s} active"), facts.states.contains(s), || {
            format!("queue {:?}", facts.states)
        }));
    }
    for s in &expect.absent_states {
        out.push(check(turn, format!("state {s} inactive"), !facts.states.contains(s), || {
            format!("queue {:?}", facts.states)
        }));
    }
    for (slot, value) in &expect.slots {
        let got = facts.slots.get(slot).map(|(v, _)| v.as_str());
        out.push(check(turn, format!("slot {slot}={value}"), got == Some(value), || {
            format!("got {got:?}")
        }));
    }
    for slot in &expect.absent_slots {
        out.push(check(turn, format!("slot {slot} empty"), !facts.slots.contains_key(slot), || {
            format!("got {:?}", facts.slots.get(slot))
        }));
    }
    for slot in &expect.confirmed {
        let ok = facts.slots.get(slot).is_some_and(|(_, c)| *c);
        out.push(check(turn, format!("slot {slot} confirmed"), ok, || {
            format!("got {:?}", facts.slots.get(slot))
        }));
    }
    let used: Vec<&str> = actions.iter().filter_map(ChatAction::template).collect();
    for t in &expect.templates {
        out.push(check(turn, format!("template {t}"), used.contains(&t.as_str()), || {
            format!("used {used:?}")
        }));
    }
    if let Some(options) = &expect.options {
        let offered: Vec<String> = actions
            .iter()
            .filter_map(|a| a.options.as_ref())
            .flatten()
            .map(|o| o.id.clone())
            .collect();
        out.push(check(turn, format!("options {options:?}"), offered == *options, || {
            format!("offered {offered:?}")
        }));
    }
    if let Some(level) = expect.formality {
        out.push(check(turn, format!("formality {}", level.as_str()), facts.formality == level, || {
            format!("got {}", facts.formality.as_str())
        }));
    }
    if let Some(c) = expect.completed {
        out.push(check(turn, format!("completed {c}"), facts.completed == c, || {
            format!("got {}", facts.completed)
        }));
    }
    out
}

fn exact_checks(run: &Run, golden: Option<&Golden>) -> Vec<CheckResult> {
    let Some(golden) = golden else {
        return vec![check(0, "golden transcript", false, || "no golden transcript recorded".into())];
    };
    let got = &run.transcript.turns;
    if got.len() != golden.turns.len() {
        return vec![check(0, "golden transcript", false, || {
            format!("{} turns, golden has {}", got.len(), golden.turns.len())
        })];
    }
    got.iter()
        .zip(&golden.turns)
        .enumerate()
        .map(|(i, (g, want))| {
            check(i + 1, "exact actions", g == want, || {
                let first = g
                    .actions
                    .iter()
                    .zip(&want.actions)
                    .position(|(a, b)| a != b)
                    .unwrap_or(g.actions.len().min(want.actions.len()));
                format!("action {} differs", first + 1)
            })
        })
        .collect()
}

/// Evaluates a finished run in the given mode.
pub fn evaluate(script: &Script, run: &Run, mode: Mode, golden: Option<&Golden>) -> ScriptReport {
    let checks = match mode {
        Mode::Exact => exact_checks(run, golden),
        Mode::Predicate => script
            .turns
            .iter()
            .zip(&run.turn_facts)
            .zip(&run.transcript.turns)
            .enumerate()
            .flat_map(|(i, ((turn, facts), t))| predicate_checks(i + 1, &turn.expect, facts, &t.actions))
            .collect(),
    };
    let engine_errors = run.turn_facts.iter().filter(|f| f.error).count();
    ScriptReport {
        name: script.name.clone(),
        mode,
        turns: script.turns.len(),
        completed: run.completed,
        fallback_turns: run.turn_facts.iter().filter(|f| f.intent == crate::nlu::FALLBACK_INTENT).count(),
        engine_errors,
        passed: engine_errors == 0 && checks.iter().all(|c| c.passed),
        checks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scripts: usize,
    pub completed: usize,
    pub completion_rate: f64,
    pub mean_turns: f64,
    /// Mean over conversations of the share of turns the NLU did not understand.
    pub mean_fallback_rate: f64,
    pub passed: usize,
}

pub fn report_metrics(reports: &[ScriptReport]) -> Result<Metrics, ReplayError> {
    if reports.is_empty() {
        return Err(ReplayError::EmptySuite);
    }
    let n = reports.len() as f64;
    let completed = reports.iter().filter(|r| r.completed).count();
    Ok(Metrics {
        scripts: reports.len(),
        completed,
        completion_rate: completed as f64 / n,
        mean_turns: reports.iter().map(|r| r.turns as f64).sum::<f64>() / n,
        mean_fallback_rate: reports
            .iter()
            .map(|r| if r.turns == 0 { 0.0 } else { r.fallback_turns as f64 / r.turns as f64 })
            .sum::<f64>()
            / n,
        passed: reports.iter().filter(|r| r.passed).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub mode: Mode,
    pub metrics: Metrics,
    pub scripts: Vec<ScriptReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.scripts.iter().all(|s| s.passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable summary, one line per script plus totals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.scripts {
            out.push_str(&format!(
                "{} {:<32} turns={:<3} completed={} fallbacks={}\n",
                if s.passed { "PASS" } else { "FAIL" },
                s.name,
                s.turns,
                s.completed,
                s.fallback_turns
            ));
            for f in s.failures() {
                out.push_str(&format!(
                    "     turn {}: {}: {}\n",
                    f.turn,
                    f.check,
                    f.detail.as_deref().unwrap_or("")
                ));
            }
        }
        let m = &self.metrics;
        out.push_str(&format!(
            "scripts={} passed={} completion_rate={:.3} mean_turns={:.2} mean_fallback_rate={:.3}\n",
            m.scripts, m.passed, m.completion_rate, m.mean_turns, m.mean_fallback_rate
        ));
        out
    }
}

/// A script file plus its recorded transcript, if any.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub path: PathBuf,
    pub script: Script,
    pub golden: Option<Golden>,
}

impl SuiteEntry {
    pub fn golden_path(&self) -> PathBuf {
        golden_path(&self.path)
    }
}

pub fn golden_path(script_path: &Path) -> PathBuf {
    let stem = script_path.file_stem().and_then(|s| s.to_str()).unwrap_or("script");
    script_path.with_file_name(format!("{stem}.golden.json"))
}

/// Loads every `*.toml` script in `dir`, ordered by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<SuiteEntry>, ReplayError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let src = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let script = Script::from_toml(&src).map_err(|e| match e {
            ReplayError::InvalidScript { reason, .. } => ReplayError::InvalidScript {
                name: path.display().to_string(),
                reason,
            },
            other => other,
        })?;
        let gp = golden_path(&path);
        let golden = match std::fs::read(&gp) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(|e| io_error(&gp, e))?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_error(&gp, e)),
        };
        entries.push(SuiteEntry { path, script, golden });
    }
    Ok(entries)
}

/// Makes a fresh claim-bot engine per script so claim numbering restarts.
#[derive(Debug, Clone)]
pub struct Runner {
    bots: HashMap<Language, Arc<ClaimBot>>,
    seed: u64,
}

impl Runner {
    pub fn new(seed: u64) -> Self {
        Self {
            bots: HashMap::new(),
            seed,
        }
    }

    /// Runner over the built-in data files in both languages.
    pub fn builtin(seed: u64) -> Result<Self, ReplayError> {
        let mut r = Self::new(seed);
        for lang in [Language::De, Language::En] {
            r = r.with_bot(ClaimBot::builtin(lang)?);
        }
        Ok(r)
    }

    pub fn with_bot(mut self, bot: ClaimBot) -> Self {
        self.bots.insert(bot.language(), Arc::new(bot));
        self
    }

    /// Applies a copy edit to every template of every bot.
    pub fn edit_templates(&self, edit: impl Fn(&str) -> String) -> Result<Self, ReplayError> {
        let mut bots = HashMap::new();
        for (lang, bot) in &self.bots {
            let edited: TemplateTable = bot.templates().map_text(&edit)?;
            bots.insert(*lang, Arc::new(bot.with_templates(edited)?));
        }
        Ok(Self { bots, seed: self.seed })
    }

    pub fn engine_for(&self, script: &Script) -> Result<Engine, ReplayError> {
        let bot = self.bots.get(&script.language).ok_or_else(|| ReplayError::InvalidScript {
            name: script.name.clone(),
            reason: format!("no bot for language {}", script.language),
        })?;
        Ok(bot.engine(Arc::new(MemorySink::new()), self.seed))
    }

    pub fn run(&self, script: &Script) -> Result<Run, ReplayError> {
        run_script(script, &self.engine_for(script)?)
    }

    pub fn replay(&self, entry: &SuiteEntry, mode: Mode) -> Result<ScriptReport, ReplayError> {
        let run = self.run(&entry.script)?;
        Ok(evaluate(&entry.script, &run, mode, entry.golden.as_ref()))
    }

    pub fn replay_suite(&self, entries: &[SuiteEntry], mode: Mode) -> Result<SuiteReport, ReplayError> {
        let scripts = entries
            .iter()
            .map(|e| self.replay(e, mode))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SuiteReport {
            mode,
            metrics: report_metrics(&scripts)?,
            scripts,
        })
    }

    /// Re-records the golden transcript of every entry.
    pub fn record(&self, entries: &[SuiteEntry]) -> Result<(), ReplayError> {
        for e in entries {
            let run = self.run(&e.script)?;
            let path = e.golden_path();
            std::fs::write(&path, run.transcript.to_json()).map_err(|err| io_error(&path, err))?;
        }
        Ok(())
    }
}
