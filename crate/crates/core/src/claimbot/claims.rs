//! Claim frames, submitted claim records and where they are written.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{SlotValue, UserContext};
use crate::engine::{Effect, EffectHandler};
use crate::msgmodel::{InboundMessage, UserKey};
use crate::nlu::validate_imei;

use super::SLOTS;

/// Effect name that submits the current frame.
pub const SUBMIT_EFFECT: &str = "submit_claim";
/// Effect output key holding the new claim id.
pub const CLAIM_ID_KEY: &str = "claim_id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageType {
    DisplayDamage,
    WaterDamage,
    Theft,
    Other,
}

impl DamageType {
    pub const ALL: [DamageType; 4] = [
        DamageType::DisplayDamage,
        DamageType::WaterDamage,
        DamageType::Theft,
        DamageType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DamageType::DisplayDamage => "display_damage",
            DamageType::WaterDamage => "water_damage",
            DamageType::Theft => "theft",
            DamageType::Other => "other",
        }
    }
}

impl fmt::Display for DamageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DamageType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DamageType::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown damage type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClaimError {
    #[error("claim field {0} missing")]
    Missing(&'static str),
    #[error("claim field {0} not confirmed")]
    Unconfirmed(&'static str),
    #[error("claim field {field} invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("claim storage failed: {0}")]
    Storage(String),
}

/// The questionnaire answers collected so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClaimFrame {
    pub damage_type: Option<String>,
    pub phone_model: Option<String>,
    pub phone_number: Option<String>,
    pub imei: Option<String>,
    pub damage_date: Option<String>,
    pub event_details: Option<String>,
    pub confirmed: BTreeSet<String>,
}

impl ClaimFrame {
    pub fn from_slots(slots: &BTreeMap<String, SlotValue>) -> Self {
        let value = |name: &str| slots.get(name).map(|s| s.value.clone());
        Self {
            damage_type: value("damage_type"),
            phone_model: value("phone_model"),
            phone_number: value("phone_number"),
            imei: value("imei"),
            damage_date: value("damage_date"),
            event_details: value("event_details"),
            confirmed: slots
                .iter()
                .filter(|(_, s)| s.confirmed)
                .map(|(n, _)| n.clone())
                .collect(),
        }
    }

    fn field(&self, name: &str) -> Option<&String> {
        match name {
            "damage_type" => self.damage_type.as_ref(),
            "phone_model" => self.phone_model.as_ref(),
            "phone_number" => self.phone_number.as_ref(),
            "imei" => self.imei.as_ref(),
            "damage_date" => self.damage_date.as_ref(),
            "event_details" => self.event_details.as_ref(),
            _ => None,
        }
    }

    /// Checks every submission rule; `today` bounds the damage date.
    pub fn complete(&self, today: NaiveDate) -> Result<Claim, ClaimError> {
        for name in SLOTS {
            if self.field(name).is_none_or(|v| v.trim().is_empty()) {
                return Err(ClaimError::Missing(name));
            }
            if !self.confirmed.contains(name) {
                return Err(ClaimError::Unconfirmed(name));
            }
        }
        let get = |name: &str| self.field(name).cloned().unwrap_or_default();
        let invalid = |field, reason: String| ClaimError::Invalid { field, reason };
        let damage_type = get("damage_type").parse().map_err(|e| invalid("damage_type", e))?;
        let imei = get("imei");
        if !validate_imei(&imei) {
            return Err(invalid("imei", "checksum mismatch".into()));
        }
        let damage_date = NaiveDate::parse_from_str(&get("damage_date"), "%Y-%m-%d")
            .map_err(|e| invalid("damage_date", e.to_string()))?;
        if damage_date > today {
            return Err(invalid("damage_date", "in the future".into()));
        }
        Ok(Claim {
            damage_type,
            phone_model: get("phone_model"),
            phone_number: get("phone_number"),
            imei,
            damage_date,
            event_details: get("event_details"),
        })
    }
}

/// A complete, validated frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub damage_type: DamageType,
    pub phone_model: String,
    pub phone_number: String,
    pub imei: String,
    pub damage_date: NaiveDate,
    pub event_details: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub user: UserKey,
    pub submitted_at: DateTime<Utc>,
    /// `<channel>/<user>#<message id>` of the submitting message.
    pub transcript_ref: String,
    pub claim: Claim,
}

/// Where submitted claims go. Implementations assign the claim id.
pub trait ClaimSink: Send + Sync {
    fn store(
        &self,
        claim: Claim,
        user: &UserKey,
        submitted_at: DateTime<Utc>,
        transcript_ref: String,
    ) -> Result<ClaimRecord, ClaimError>;
}

fn claim_id(date: NaiveDate, n: u64) -> String {
    format!("CLM-{}-{n:06}", date.format("%Y%m%d"))
}

fn record(id: String, claim: Claim, user: &UserKey, submitted_at: DateTime<Utc>, transcript_ref: String) -> ClaimRecord {
    ClaimRecord {
        claim_id: id,
        user: user.clone(),
        submitted_at,
        transcript_ref,
        claim,
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<ClaimRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<ClaimRecord> {
        self.records.lock().expect("sink lock").clone()
    }
}

impl ClaimSink for MemorySink {
    fn store(
        &self,
        claim: Claim,
        user: &UserKey,
        submitted_at: DateTime<Utc>,
        transcript_ref: String,
    ) -> Result<ClaimRecord, ClaimError> {
        let mut records = self.records.lock().map_err(|e| ClaimError::Storage(e.to_string()))?;
        let id = claim_id(submitted_at.date_naive(), records.len() as u64 + 1);
        let r = record(id, claim, user, submitted_at, transcript_ref);
        records.push(r.clone());
        Ok(r)
    }
}

/// One JSON file per claim, never overwritten.
#[derive(Debug)]
pub struct DirSink {
    dir: PathBuf,
    counter: AtomicU64,
}

fn parse_counter(file_name: &str) -> Option<u64> {
    file_name.strip_suffix(".json")?.rsplit('-').next()?.parse().ok()
}

impl DirSink {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ClaimError> {
        let dir = dir.into();
        let storage = |e: std::io::Error| ClaimError::Storage(format!("{}: {e}", dir.display()));
        fs::create_dir_all(&dir).map_err(storage)?;
        let mut max = 0;
        for entry in fs::read_dir(&dir).map_err(storage)? {
            let entry = entry.map_err(storage)?;
            if let Some(n) = entry.file_name().to_str().and_then(parse_counter) {
                max = max.max(n);
            }
        }
        Ok(Self {
            dir,
            counter: AtomicU64::new(max),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, claim_id: &str) -> PathBuf {
        self.dir.join(format!("{claim_id}.json"))
    }

    /// All records in the directory, ordered by claim id.
    pub fn list(&self) -> Result<Vec<ClaimRecord>, ClaimError> {
        list_records(&self.dir)
    }
}

pub fn list_records(dir: &Path) -> Result<Vec<ClaimRecord>, ClaimError> {
    let storage = |e: String| ClaimError::Storage(e);
    let mut records = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(records),
        Err(e) => return Err(storage(format!("{}: {e}", dir.display()))),
    };
    for entry in entries {
        let path = entry.map_err(|e| storage(e.to_string()))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let bytes = fs::read(&path).map_err(|e| storage(format!("{}: {e}", path.display())))?;
            let r: ClaimRecord =
                serde_json::from_slice(&bytes).map_err(|e| storage(format!("{}: {e}", path.display())))?;
            records.push(r);
        }
    }
    records.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    Ok(records)
}

impl ClaimSink for DirSink {
    fn store(
        &self,
        claim: Claim,
        user: &UserKey,
        submitted_at: DateTime<Utc>,
        transcript_ref: String,
    ) -> Result<ClaimRecord, ClaimError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let r = record(claim_id(submitted_at.date_naive(), n), claim, user, submitted_at, transcript_ref);
        let path = self.path_for(&r.claim_id);
        let storage = |e: std::io::Error| ClaimError::Storage(format!("{}: {e}", path.display()));
        let mut bytes = serde_json::to_vec_pretty(&r).map_err(|e| ClaimError::Storage(e.to_string()))?;
        bytes.push(b'\n');
        let mut file = fs::OpenOptions::new().write(true).create_new(true).open(&path).map_err(storage)?;
        file.write_all(&bytes).map_err(storage)?;
        file.sync_all().map_err(storage)?;
        Ok(r)
    }
}

/// Validates `frame` and hands it to `sink`.
pub fn submit_claim(
    frame: &ClaimFrame,
    user: &UserKey,
    transcript_ref: String,
    submitted_at: DateTime<Utc>,
    sink: &dyn ClaimSink,
) -> Result<ClaimRecord, ClaimError> {
    let claim = frame.complete(submitted_at.date_naive())?;
    sink.store(claim, user, submitted_at, transcript_ref)
}

/// Runs the submit effect against a claim sink.
#[derive(Clone)]
pub struct ClaimEffects {
    sink: Arc<dyn ClaimSink>,
}

impl ClaimEffects {
    pub fn new(sink: Arc<dyn ClaimSink>) -> Self {
        Self { sink }
    }
}

impl EffectHandler for ClaimEffects {
    fn apply(
        &self,
        effect: &Effect,
        context: &UserContext,
        inbound: &InboundMessage,
    ) -> Result<BTreeMap<String, String>, String> {
        if effect.name != SUBMIT_EFFECT {
            return Err(format!("unknown effect {}", effect.name));
        }
        let frame = ClaimFrame::from_slots(&context.slots);
        let transcript_ref = format!("{}#{}", inbound.key, inbound.message_id);
        let r = submit_claim(&frame, &inbound.key, transcript_ref, inbound.timestamp, self.sink.as_ref())
            .map_err(|e| e.to_string())?;
        tracing::info!(claim_id = %r.claim_id, user = %inbound.key, "claim submitted");
        Ok(BTreeMap::from([(CLAIM_ID_KEY.to_owned(), r.claim_id)]))
    }
}
