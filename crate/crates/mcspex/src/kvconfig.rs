//! `key=value` text files: one pair per line, `#` comments, blank lines ignored.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parsed key=value document; `origin` names the file in error messages.
#[derive(Clone, Debug, Default)]
pub struct KvDoc {
    pub origin: String,
    pub entries: Vec<KvEntry>,
}

impl KvDoc {
    pub fn parse(origin: &str, text: &str) -> Result<Self> {
        let mut entries: Vec<KvEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line,
                msg: format!("expected key=value, got `{body}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: "empty key".into(),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("duplicate key `{key}` (first on line {})", prev.line),
                });
            }
            entries.push(KvEntry {
                key,
                value: v.trim().to_string(),
                line,
            });
        }
        Ok(KvDoc {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn error(&self, entry: &KvEntry, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line: entry.line,
            msg: msg.into(),
        }
    }

    /// Rejects the first key not in `known`, naming its line.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !known.contains(&e.key.as_str())) {
            Some(e) => Err(self.error(e, format!("unknown key `{}`", e.key))),
            None => Ok(()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&KvEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Parses `key` into `slot` when present.
    pub fn set<V: FromStr>(&self, key: &str, slot: &mut V) -> Result<()>
    where
        V::Err: std::fmt::Display,
    {
        if let Some(e) = self.get(key) {
            *slot = e
                .value
                .parse()
                .map_err(|err| self.error(e, format!("bad value for `{key}`: {err}")))?;
        }
        Ok(())
    }

    /// Parses a comma-separated list into `slot` when present.
    pub fn set_list<V: FromStr>(&self, key: &str, slot: &mut Vec<V>) -> Result<()>
    where
        V::Err: std::fmt::Display,
    {
        if let Some(e) = self.get(key) {
            *slot = e
                .value
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|err| self.error(e, format!("bad list for `{key}`: {err}")))?;
        }
        Ok(())
    }
}

/// Renders `(key, value)` pairs in the same format.
pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn join_list<V: ToString>(xs: &[V]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
