//! Flat key-value configuration files with section headers.
//!
//! ```text
//! # comment
//! [experiment baseline]
//! dataset = two_moons
//! epochs = 30
//! ```
//!
//! Lines are trimmed; blank lines and lines starting with `#` or `;` are
//! ignored. A header is `[kind]` or `[kind name]`. Every other line must be
//! `key = value`; keys before the first header belong to an implicit
//! section named `global`. Keys are unique within a section.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub kind: String,
    pub name: Option<String>,
    /// 1-based line of the header (0 for the implicit global section).
    pub line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    pub fn new(kind: impl Into<String>, name: Option<String>) -> Self {
        Self {
            kind: kind.into(),
            name,
            ..Self::default()
        }
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), (value.into(), 0));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `key` with `FromStr`, reporting the value's line on failure.
    pub fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| Error::Parse {
                line: *line,
                msg: format!("{key} = {v}: {e}"),
            }),
        }
    }

    pub fn parse_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    /// Errors on any key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("unknown key '{k}' in [{}]; valid: {}", self.kind, allowed.join(", ")),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub sections: Vec<Section>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = vec![Section {
            kind: "global".into(),
            ..Section::default()
        }];
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let inner = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: "unterminated section header".into(),
                })?;
                let mut parts = inner.trim().splitn(2, char::is_whitespace);
                let kind = parts.next().unwrap_or("").to_string();
                if kind.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "empty section header".into(),
                    });
                }
                let name = parts.next().map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
                sections.push(Section {
                    kind,
                    name,
                    line: line_no,
                    entries: BTreeMap::new(),
                });
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            let section = sections.last_mut().expect("global section");
            if section.entries.contains_key(key) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            section.entries.insert(key.to_string(), (v.trim().to_string(), line_no));
        }
        Ok(Self { sections })
    }

    pub fn global(&self) -> &Section {
        &self.sections[0]
    }

    pub fn sections_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().skip(1).filter(move |s| s.kind == kind)
    }
}
