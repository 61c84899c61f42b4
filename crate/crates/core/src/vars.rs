//! The variable tree carried by every process instance.
//!
//! Values are plain JSON. Keys are kept sorted (serde_json's default `Map`
//! is a `BTreeMap`), so the canonical text form is stable across runs.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Root map of an instance's variables. Service requests are built from it
/// and service responses are merged back into it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableTree(Map<String, Value>);

impl VariableTree {
    pub fn new() -> Self {
        Self(Map::new())
    }

    /// Wraps a JSON value. Non-object values are stored under the key
    /// `value` so a service may answer with a bare scalar.
    pub fn from_value(value: Value) -> Self {
        match value {
            Value::Object(map) => Self(map),
            Value::Null => Self::new(),
            other => {
                let mut map = Map::new();
                map.insert("value".to_string(), other);
                Self(map)
            }
        }
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }

    pub fn as_map(&self) -> &Map<String, Value> {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Looks up a dot-separated path. Numeric segments index into lists.
    pub fn get_path(&self, path: &str) -> Option<&Value> {
        let mut segments = path.split('.');
        let first = segments.next()?;
        let mut current = self.0.get(first)?;
        for segment in segments {
            current = step_into(current, segment)?;
        }
        Some(current)
    }

    /// Writes `value` at a dot-separated path, creating intermediate maps.
    /// An intermediate scalar is replaced by a map.
    pub fn set_path(&mut self, path: &str, value: Value) {
        let segments: Vec<&str> = path.split('.').collect();
        let (last, parents) = segments.split_last().expect("split yields one segment");
        let mut map = &mut self.0;
        for segment in parents {
            let slot = map
                .entry(segment.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !slot.is_object() {
                *slot = Value::Object(Map::new());
            }
            map = slot.as_object_mut().expect("slot is an object");
        }
        map.insert(last.to_string(), value);
    }

    /// Canonical JSON text: sorted keys, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(&self.0).expect("JSON maps always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let value: Value = serde_json::from_str(text)?;
        Ok(Self::from_value(value))
    }
}

impl From<Map<String, Value>> for VariableTree {
    fn from(map: Map<String, Value>) -> Self {
        Self(map)
    }
}

pub(crate) fn step_into<'a>(value: &'a Value, segment: &str) -> Option<&'a Value> {
    match value {
        Value::Object(map) => map.get(segment),
        Value::Array(items) => segment.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    }
}

/// Resolves a dot path against an arbitrary JSON value. An empty path or
/// `$` returns the value itself.
pub fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    if path.is_empty() || path == "$" {
        return Some(value);
    }
    path.split('.').try_fold(value, step_into)
}
