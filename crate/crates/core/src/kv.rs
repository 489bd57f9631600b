//! Line-oriented `key = value` text used by calibration, scene, manifest and
//! report files. `#` starts a comment; keys may repeat and keep file order.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, what: &'static str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(what, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format(what, format!("line {}: empty key", lineno + 1)));
            }
            entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require<T: FromStr>(&self, key: &str, what: &'static str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::format(what, format!("missing key `{key}`")))?;
        parse_value(raw, key, what)
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T, what: &'static str) -> Result<T> {
        match self.get(key) {
            Some(raw) => parse_value(raw, key, what),
            None => Ok(default),
        }
    }

    /// Whitespace-separated list of values under one key.
    pub fn require_list<T: FromStr>(&self, key: &str, what: &'static str) -> Result<Vec<T>> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::format(what, format!("missing key `{key}`")))?;
        raw.split_whitespace().map(|tok| parse_value(tok, key, what)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub(crate) fn parse_value<T: FromStr>(raw: &str, key: &str, what: &'static str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::format(what, format!("key `{key}`: cannot parse `{raw}`")))
}

/// Parses `a=1 b=2` attribute lists used for per-object scene records.
pub(crate) fn parse_attrs(raw: &str, what: &'static str) -> Result<Vec<(String, String)>> {
    raw.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(what, format!("attribute `{tok}` is not `k=v`")))
        })
        .collect()
}
