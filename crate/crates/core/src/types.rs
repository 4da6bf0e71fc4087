//! Domain types shared by the engines, the client proxy, the trace format and
//! the checkers.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CoreError;

/// A key in the store. Non-empty and free of control characters, since keys
/// travel inside a line-oriented wire format.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(Arc<str>);

impl Key {
    pub fn new(name: impl AsRef<str>) -> Result<Self, CoreError> {
        let name = name.as_ref();
        if name.is_empty() {
            return Err(CoreError::InvalidKey("key must not be empty".into()));
        }
        if name.chars().any(char::is_control) {
            return Err(CoreError::InvalidKey(format!(
                "key {name:?} contains a control character"
            )));
        }
        Ok(Key(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for Key {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl TryFrom<&str> for Key {
    type Error = CoreError;
    fn try_from(s: &str) -> Result<Self, Self::Error> {
        Key::new(s)
    }
}

impl Serialize for Key {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Key::new(s).map_err(serde::de::Error::custom)
    }
}

/// An opaque value. Integers are encoded as decimal strings.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(Arc<str>);

impl Value {
    pub fn new(bytes: impl AsRef<str>) -> Result<Self, CoreError> {
        let bytes = bytes.as_ref();
        if bytes.contains('\n') || bytes.contains('\r') {
            return Err(CoreError::InvalidValue(format!(
                "value {bytes:?} contains a line break"
            )));
        }
        Ok(Value(Arc::from(bytes)))
    }

    pub fn from_int(n: i64) -> Self {
        Value(Arc::from(n.to_string()))
    }

    /// Parses the value as a decimal integer, if it is one.
    pub fn as_int(&self) -> Option<i64> {
        self.0.parse().ok()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Value::new(s).map_err(serde::de::Error::custom)
    }
}

/// A tick of the server clock. Always positive; tick 0 is the clock's
/// initial reading and is never handed out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub fn new(tick: u64) -> Result<Self, CoreError> {
        if tick == 0 {
            return Err(CoreError::InvalidTimestamp);
        }
        Ok(Timestamp(tick))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tick = u64::deserialize(d)?;
        Timestamp::new(tick).map_err(serde::de::Error::custom)
    }
}

/// A committed value tagged with the commit timestamp that installed it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Version {
    pub value: Value,
    pub commit_ts: Timestamp,
}

impl Version {
    pub fn new(value: Value, commit_ts: Timestamp) -> Self {
        Version { value, commit_ts }
    }
}

/// All committed versions of one key, newest first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyHistory {
    versions: Vec<Version>,
}

impl KeyHistory {
    pub fn empty() -> Self {
        KeyHistory::default()
    }

    /// Builds a history from versions listed newest first. No ordering check
    /// is made; see [`KeyHistory::is_well_formed`].
    pub fn from_newest_first(versions: Vec<Version>) -> Self {
        KeyHistory { versions }
    }

    /// Builds a history from `(value, commit_ts)` pairs listed newest first.
    pub fn from_pairs<V: AsRef<str>>(pairs: &[(V, u64)]) -> Result<Self, CoreError> {
        let versions = pairs
            .iter()
            .map(|(v, ts)| Ok(Version::new(Value::new(v)?, Timestamp::new(*ts)?)))
            .collect::<Result<Vec<_>, CoreError>>()?;
        Ok(KeyHistory { versions })
    }

    pub fn versions(&self) -> &[Version] {
        &self.versions
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn newest(&self) -> Option<&Version> {
        self.versions.first()
    }

    /// Commit timestamps strictly decrease from head to tail.
    pub fn is_well_formed(&self) -> bool {
        self.versions
            .windows(2)
            .all(|w| w[0].commit_ts > w[1].commit_ts)
    }

    /// Installs `version` as the newest version.
    pub(crate) fn push_newest(&mut self, version: Version) {
        self.versions.insert(0, version);
    }
}

/// Server-side store layout: every key maps to its version history.
pub type Store = BTreeMap<Key, KeyHistory>;

/// One buffered write in a transaction's cache.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteEntry {
    pub value: Value,
    pub updated: bool,
}

/// The writes buffered by an active transaction, keyed by key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteSet {
    entries: BTreeMap<Key, WriteEntry>,
}

impl WriteSet {
    pub fn new() -> Self {
        WriteSet::default()
    }

    /// Records a write; a later write to the same key replaces the earlier one.
    pub fn write(&mut self, key: Key, value: Value) {
        self.entries.insert(key, WriteEntry { value, updated: true });
    }

    /// Inserts an entry with an explicit update flag.
    pub fn insert_entry(&mut self, key: Key, value: Value, updated: bool) {
        self.entries.insert(key, WriteEntry { value, updated });
    }

    pub fn get(&self, key: &str) -> Option<&WriteEntry> {
        self.entries.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &WriteEntry)> {
        self.entries.iter()
    }

    /// Entries whose update flag is set.
    pub fn updated(&self) -> impl Iterator<Item = (&Key, &Value)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.updated)
            .map(|(k, e)| (k, &e.value))
    }

    /// Updated entries as `(key, value)` pairs in key order.
    pub fn to_pairs(&self) -> Vec<(Key, Value)> {
        self.updated().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

impl FromIterator<(Key, Value)> for WriteSet {
    fn from_iter<I: IntoIterator<Item = (Key, Value)>>(iter: I) -> Self {
        let mut ws = WriteSet::new();
        for (k, v) in iter {
            ws.write(k, v);
        }
        ws
    }
}

/// Which isolation behaviour a server implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EngineKind {
    /// Read uncommitted: writes are visible to everyone as soon as they happen.
    Ru,
    /// Read committed: reads see the latest committed value.
    Rc,
    /// Snapshot isolation over multi-version histories.
    Si,
}

impl EngineKind {
    pub const ALL: [EngineKind; 3] = [EngineKind::Ru, EngineKind::Rc, EngineKind::Si];

    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Ru => "ru",
            EngineKind::Rc => "rc",
            EngineKind::Si => "si",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EngineKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ru" => Ok(EngineKind::Ru),
            "rc" => Ok(EngineKind::Rc),
            "si" => Ok(EngineKind::Si),
            other => Err(CoreError::UnknownLevel(other.to_string())),
        }
    }
}

impl Serialize for EngineKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EngineKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Convenience constructor for tests and scenario definitions.
///
/// # Panics
/// Panics if `name` is not a valid key.
pub fn key(name: &str) -> Key {
    Key::new(name).expect("invalid key literal")
}

/// Convenience constructor for tests and scenario definitions.
///
/// # Panics
/// Panics if `v` is not a valid value.
pub fn val(v: &str) -> Value {
    Value::new(v).expect("invalid value literal")
}
