//! Name-keyed registries used to select algorithm variants at runtime.
//!
//! Solvers, travel-time providers and replay policies are each registered
//! under a short name (`"hungarian"`, `"haversine"`, `"bau"`, ...) so the CLI
//! and service config can pick them without hard-coding types.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {})", available.join(", "))]
pub struct UnknownEntry {
    pub kind: &'static str,
    pub name: String,
    pub available: Vec<String>,
}

pub struct Registry<T> {
    kind: &'static str,
    entries: BTreeMap<String, T>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: BTreeMap::new() }
    }

    /// Register `entry` under `name`, returning any entry it replaced.
    pub fn register(&mut self, name: impl Into<String>, entry: T) -> Option<T> {
        self.entries.insert(name.into(), entry)
    }

    pub fn with(mut self, name: impl Into<String>, entry: T) -> Self {
        self.register(name, entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T, UnknownEntry> {
        self.entries.get(name).ok_or_else(|| UnknownEntry {
            kind: self.kind,
            name: name.to_string(),
            available: self.names(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_listing() {
        let reg = Registry::new("widget").with("b", 2).with("a", 1);
        assert_eq!(*reg.get("a").unwrap(), 1);
        assert_eq!(reg.names(), vec!["a", "b"]);
        let err = reg.get("zzz").unwrap_err();
        assert_eq!(err.to_string(), "unknown widget `zzz` (available: a, b)");
    }

    #[test]
    fn register_replaces() {
        let mut reg = Registry::new("widget");
        assert!(reg.register("a", 1).is_none());
        assert_eq!(reg.register("a", 5), Some(1));
    }
}
