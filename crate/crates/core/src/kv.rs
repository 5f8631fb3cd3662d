//! Flat `key = value` text files; `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed entries keyed by name, each with its line number.
pub(crate) struct Entries {
    pub map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value', found '{content}'")))?;
            let key = k.trim().to_string();
            if let Some((prev, _)) = map.insert(key.clone(), (line, v.trim().to_string())) {
                return Err(Error::Config(format!("line {line}: duplicate key '{key}' (first set on line {prev})")));
            }
        }
        Ok(Self { map })
    }

    pub fn require(&self, keys: &[&str]) -> Result<()> {
        match keys.iter().find(|k| !self.map.contains_key(**k)) {
            Some(k) => Err(Error::Config(format!("missing required key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some((line, raw)) = self.map.remove(key) {
            *slot = raw
                .parse()
                .map_err(|e| Error::Config(format!("line {line}: invalid value for '{key}': {e}")))?;
        }
        Ok(())
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some((line, raw)) = self.map.remove(key) {
            *slot = raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::Config(format!("line {line}: invalid value for '{key}': {e}"))))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            Some((key, (line, _))) => Err(Error::Config(format!("line {line}: unknown key '{key}'"))),
            None => Ok(()),
        }
    }
}
