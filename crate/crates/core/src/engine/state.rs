use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::nlu::MessageUnderstanding;

/// Remaining dialog moves of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lifetime {
    Moves(u32),
    Unbounded,
}

impl Lifetime {
    pub fn is_expired(self) -> bool {
        self == Lifetime::Moves(0)
    }

    fn decremented(self) -> Self {
        match self {
            Lifetime::Moves(n) => Lifetime::Moves(n.saturating_sub(1)),
            Lifetime::Unbounded => Lifetime::Unbounded,
        }
    }
}

impl fmt::Display for Lifetime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lifetime::Moves(n) => write!(f, "{n}"),
            Lifetime::Unbounded => f.write_str("unbounded"),
        }
    }
}

// Wire form: a move count, or the string "unbounded".
impl Serialize for Lifetime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Lifetime::Moves(n) => serializer.serialize_u32(*n),
            Lifetime::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Lifetime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Moves(u32),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Moves(n) => Ok(Lifetime::Moves(n)),
            Raw::Word(w) if w == "unbounded" => Ok(Lifetime::Unbounded),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("invalid lifetime {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogState {
    pub name: String,
    pub lifetime: Lifetime,
    /// Higher dispatches first.
    pub priority: i32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payload: BTreeMap<String, String>,
}

impl DialogState {
    pub fn new(name: impl Into<String>, lifetime: Lifetime, priority: i32) -> Self {
        Self {
            name: name.into(),
            lifetime,
            priority,
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    state: DialogState,
    seq: u64,
}

/// Simultaneously active dialog states, ordered by priority (descending) and
/// then by recency of insertion (most recent first). Names are unique and
/// expired states never stay queued.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateQueue {
    entries: Vec<Entry>,
    next_seq: u64,
}

impl StateQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `state`, replacing (and re-timing) an entry of the same name.
    /// A state pushed with an exhausted lifetime just removes that name.
    pub fn push(&mut self, state: DialogState) {
        self.remove(&state.name);
        if state.lifetime.is_expired() {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let key = |e: &Entry| (Reverse(e.state.priority), Reverse(e.seq));
        let entry = Entry { state, seq };
        let at = self.entries.partition_point(|e| key(e) < key(&entry));
        self.entries.insert(at, entry);
    }

    pub fn remove(&mut self, name: &str) -> Option<DialogState> {
        let idx = self.entries.iter().position(|e| e.state.name == name)?;
        Some(self.entries.remove(idx).state)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn get(&self, name: &str) -> Option<&DialogState> {
        self.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// States in dispatch order.
    pub fn iter(&self) -> impl Iterator<Item = &DialogState> {
        self.entries.iter().map(|e| &e.state)
    }

    pub fn names(&self) -> Vec<&str> {
        self.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One dialog move: every bounded lifetime drops by one and exhausted
    /// states leave the queue. Utter non-understanding leaves the queue as is.
    pub fn tick(&mut self, understanding: &MessageUnderstanding) {
        if understanding.is_fallback() {
            return;
        }
        for entry in &mut self.entries {
            entry.state.lifetime = entry.state.lifetime.decremented();
        }
        self.entries.retain(|e| !e.state.lifetime.is_expired());
    }

    /// Checks the queue invariants; used by property tests and when loading
    /// persisted contexts.
    pub fn check(&self) -> Result<(), String> {
        let mut names = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.state.name.is_empty() {
                return Err("state with empty name".into());
            }
            if e.state.lifetime.is_expired() {
                return Err(format!("expired state {} queued", e.state.name));
            }
            if !names.insert(&e.state.name) {
                return Err(format!("duplicate state {}", e.state.name));
            }
            if e.seq >= self.next_seq {
                return Err(format!("state {} has sequence from the future", e.state.name));
            }
        }
        let ordered = self.entries.windows(2).all(|w| {
            (Reverse(w[0].state.priority), Reverse(w[0].seq)) < (Reverse(w[1].state.priority), Reverse(w[1].seq))
        });
        if !ordered {
            return Err("queue order violated".into());
        }
        Ok(())
    }
}

impl FromIterator<DialogState> for StateQueue {
    fn from_iter<I: IntoIterator<Item = DialogState>>(iter: I) -> Self {
        let mut queue = StateQueue::new();
        for state in iter {
            queue.push(state);
        }
        queue
    }
}

/// Pure form of [`StateQueue::tick`].
pub fn tick_lifetimes(queue: &StateQueue, understanding: &MessageUnderstanding) -> StateQueue {
    let mut next = queue.clone();
    next.tick(understanding);
    next
}
