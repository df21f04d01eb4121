//! Plain-text `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys may appear once. Every
//! key must be consumed by the reader, so typos are reported instead of
//! silently ignored.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("line {}: expected key=value, got {raw:?}", n + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(Error::invalid(format!("line {}: empty key", n + 1)));
            }
            if entries.iter().any(|(e, _)| *e == k) {
                return Err(Error::invalid(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            entries.push((k, v));
        }
        Ok(KeyValues {
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::invalid(format!("bad value for {key}: {v:?}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| parse_list(v).map_err(|_| Error::invalid(format!("bad list for {key}: {v:?}"))))
            .transpose()
    }

    /// `HxW`, e.g. `40x40`.
    pub fn size(&self, key: &str) -> Result<Option<(usize, usize)>> {
        self.raw(key).map(parse_size).transpose()
    }

    /// Fails if any key was never read.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, T::Err> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

pub fn parse_size(v: &str) -> Result<(usize, usize)> {
    let bad = || Error::invalid(format!("expected HxW, got {v:?}"));
    let (h, w) = v.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        h.trim().parse().map_err(|_| bad())?,
        w.trim().parse().map_err(|_| bad())?,
    ))
}
