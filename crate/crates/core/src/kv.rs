//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parsed key/value pairs. Keys are kept sorted so that [`KeyValues::render`]
/// and [`KeyValues::digest`] are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse {key} = {raw:?}"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn update<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails on keys outside `known`, catching typos in config files.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> KeyValues {
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Entries whose key contains no `.`.
    pub fn top_level(&self) -> KeyValues {
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !k.contains('.'))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Adds every entry of `other` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# corpus\nduration_s = 60\n\nseed=7 # trailing\n").unwrap();
        assert_eq!(kv.get::<f64>("duration_s").unwrap(), Some(60.0));
        assert_eq!(kv.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(kv.get::<u64>("absent").unwrap(), None);
        assert!(kv.get::<u64>("duration_s").is_ok());
        assert!(kv.reject_unknown(&["seed"]).is_err());
    }

    #[test]
    fn sections_split_and_merge() {
        let kv = KeyValues::parse("seed = 1\ncorpus.rate = 125\ncorpus.duration_s = 60\ntrain.epochs = 3\n").unwrap();
        let c = kv.section("corpus.");
        assert_eq!(c.get::<f64>("rate").unwrap(), Some(125.0));
        assert_eq!(c.get::<u64>("seed").unwrap(), None);
        assert_eq!(kv.top_level().render(), "seed = 1\n");
        let mut back = kv.top_level();
        back.merge_prefixed("corpus.", &c);
        back.merge_prefixed("train.", &kv.section("train."));
        assert_eq!(back, kv);
    }

    #[test]
    fn render_is_order_independent() {
        let a = KeyValues::parse("a=1\nb=2").unwrap();
        let b = KeyValues::parse("b=2\na=1").unwrap();
        assert_eq!(a.digest(), b.digest());
    }
}
