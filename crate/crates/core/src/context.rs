//! Per-user conversation context and its stores.
//!
//! Contexts are saved with optimistic versioning: a save succeeds only if the
//! stored version still equals the version the caller loaded. Two concurrent
//! turns for the same user therefore surface as a [`StoreError::VersionConflict`]
//! instead of silently losing one of them.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::StateQueue;
use crate::msgmodel::{Direction, UserKey};
use crate::nlu::Sentiment;
use crate::respond::Formality;

pub const DEFAULT_HISTORY_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub value: String,
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub timestamp: DateTime<Utc>,
    pub direction: Direction,
    /// Intent or action/template ids; raw text is not kept.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserContext {
    pub key: UserKey,
    pub state_queue: StateQueue,
    pub formality: Formality,
    pub user_name: Option<String>,
    pub mood: Sentiment,
    pub slots: BTreeMap<String, SlotValue>,
    pub history: VecDeque<HistoryEntry>,
    /// Stored version this snapshot was read at.
    pub version: u64,
    /// Number of user turns processed.
    pub turn: u64,
}

impl UserContext {
    pub fn new(key: UserKey) -> Self {
        Self {
            key,
            state_queue: StateQueue::new(),
            formality: Formality::default(),
            user_name: None,
            mood: Sentiment::Neutral,
            slots: BTreeMap::new(),
            history: VecDeque::new(),
            version: 0,
            turn: 0,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&SlotValue> {
        self.slots.get(name)
    }

    pub fn push_history(&mut self, entry: HistoryEntry, limit: usize) {
        self.history.push_back(entry);
        while self.history.len() > limit {
            self.history.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("context store unavailable: {0}")]
    Unavailable(String),
    #[error("corrupt context record for {key}: {reason}")]
    Corrupt { key: UserKey, reason: String },
    #[error("version conflict for {key}: expected {expected}, stored {found}")]
    VersionConflict { key: UserKey, expected: u64, found: u64 },
}

pub trait ContextStore: Send + Sync {
    /// Existing context verbatim, or a fresh one at version 0.
    fn load_or_create(&self, key: &UserKey) -> Result<UserContext, StoreError>;

    /// Persists `ctx` if the stored version still equals `ctx.version`;
    /// returns the new stored version.
    fn save(&self, ctx: &UserContext) -> Result<u64, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: Mutex<HashMap<UserKey, UserContext>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ContextStore for MemoryStore {
    fn load_or_create(&self, key: &UserKey) -> Result<UserContext, StoreError> {
        let records = self.records.lock().map_err(|e| StoreError::Unavailable(e.to_string()))?;
        Ok(records.get(key).cloned().unwrap_or_else(|| UserContext::new(key.clone())))
    }

    fn save(&self, ctx: &UserContext) -> Result<u64, StoreError> {
        let mut records = self.records.lock().map_err(|e| StoreError::Unavailable(e.to_string()))?;
        let stored = records.get(&ctx.key).map_or(0, |c| c.version);
        if stored != ctx.version {
            return Err(StoreError::VersionConflict {
                key: ctx.key.clone(),
                expected: ctx.version,
                found: stored,
            });
        }
        let mut record = ctx.clone();
        record.version = stored + 1;
        records.insert(ctx.key.clone(), record);
        Ok(stored + 1)
    }
}

/// One JSON file per user under a data directory.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    // serializes check-then-write within this process
    write_lock: Mutex<()>,
}

fn escape_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| StoreError::Unavailable(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &UserKey) -> PathBuf {
        self.dir.join(format!(
            "{}--{}.json",
            escape_component(&key.channel_id),
            escape_component(&key.user_id)
        ))
    }

    fn read(&self, key: &UserKey) -> Result<Option<UserContext>, StoreError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(StoreError::Unavailable(format!("{}: {e}", path.display()))),
        };
        let corrupt = |reason: String| StoreError::Corrupt {
            key: key.clone(),
            reason,
        };
        let ctx: UserContext = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if ctx.key != *key {
            return Err(corrupt(format!("record belongs to {}", ctx.key)));
        }
        ctx.state_queue.check().map_err(corrupt)?;
        Ok(Some(ctx))
    }
}

impl ContextStore for FileStore {
    fn load_or_create(&self, key: &UserKey) -> Result<UserContext, StoreError> {
        Ok(self.read(key)?.unwrap_or_else(|| UserContext::new(key.clone())))
    }

    fn save(&self, ctx: &UserContext) -> Result<u64, StoreError> {
        let _guard = self.write_lock.lock().map_err(|e| StoreError::Unavailable(e.to_string()))?;
        let stored = self.read(&ctx.key)?.map_or(0, |c| c.version);
        if stored != ctx.version {
            return Err(StoreError::VersionConflict {
                key: ctx.key.clone(),
                expected: ctx.version,
                found: stored,
            });
        }
        let mut record = ctx.clone();
        record.version = stored + 1;
        let bytes = serde_json::to_vec_pretty(&record).map_err(|e| StoreError::Unavailable(e.to_string()))?;
        let path = self.path_for(&ctx.key);
        let tmp = path.with_extension("json.tmp");
        let io_err = |e: std::io::Error| StoreError::Unavailable(format!("{}: {e}", path.display()));
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(&bytes).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(record.version)
    }
}
