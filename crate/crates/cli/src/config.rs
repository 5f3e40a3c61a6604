//! Flat `section.key = value` scenario files.
//!
//! ```text
//! # comment
//! include = base.cfg
//! grid.nodes = 64
//! initial.u0 = sin(2*pi*x)
//! ```
//!
//! Includes are resolved relative to the including file and read in place;
//! later assignments override earlier ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rpde_core::{Error, Expr, Result};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub value: String,
    pub file: String,
    pub line: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    /// Files read, in order.
    pub sources: Vec<PathBuf>,
}

fn at(file: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{file}:{line}: {msg}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        let mut stack = Vec::new();
        cfg.read_file(path, &mut stack)?;
        Ok(cfg)
    }

    /// Parses text; includes are resolved against `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        let mut stack = Vec::new();
        cfg.read_text(text, origin, base, &mut stack)?;
        Ok(cfg)
    }

    fn read_file(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
        let canon = fs::canonicalize(path)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        if stack.contains(&canon) {
            return Err(Error::Config(format!("include cycle through {}", path.display())));
        }
        let text = fs::read_to_string(&canon)?;
        stack.push(canon.clone());
        self.sources.push(canon.clone());
        let base = canon.parent().map(Path::to_path_buf).unwrap_or_default();
        self.read_text(&text, &path.display().to_string(), &base, stack)?;
        stack.pop();
        Ok(())
    }

    fn read_text(&mut self, text: &str, origin: &str, base: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(at(origin, line, format!("expected `key = value`, got `{body}`")));
            };
            let key = key.trim();
            let value = value.trim().trim_matches('"').to_string();
            if key == "include" {
                self.read_file(&base.join(&value), stack)
                    .map_err(|e| at(origin, line, format!("in include `{value}`: {e}")))?;
                continue;
            }
            let valid = key.split('.').count() == 2
                && key.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid {
                return Err(at(origin, line, format!("key `{key}` is not of the form section.key")));
            }
            if value.is_empty() {
                return Err(at(origin, line, format!("`{key}` has no value")));
            }
            self.entries.insert(
                key.to_string(),
                Entry {
                    value,
                    file: origin.to_string(),
                    line,
                },
            );
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Overrides from the command line.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                file: "<command line>".into(),
                line: 0,
            },
        );
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    fn parsed<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .ok_or_else(|| at(&e.file, e.line, format!("`{key}` must be {what}, got `{}`", e.value))),
        }
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.parsed(key, "a number", |v| match v {
            "inf" | "infinity" => Some(f64::INFINITY),
            _ => v.parse::<f64>().ok().filter(|x| !x.is_nan()),
        })
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed(key, "a non-negative integer", |v| v.parse().ok())?.unwrap_or(default))
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        self.parsed(key, "a non-negative integer", |v| v.parse().ok())
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self
            .parsed(key, "true or false", |v| match v {
                "true" | "yes" | "1" => Some(true),
                "false" | "no" | "0" => Some(false),
                _ => None,
            })?
            .unwrap_or(default))
    }

    pub fn str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.entries.get(key).map(|e| e.value.as_str()).unwrap_or(default)
    }

    /// One of `choices`, defaulting to the first.
    pub fn choice(&self, key: &str, choices: &[&str]) -> Result<String> {
        match self.entries.get(key) {
            None => Ok(choices[0].to_string()),
            Some(e) if choices.contains(&e.value.as_str()) => Ok(e.value.clone()),
            Some(e) => Err(at(&e.file, e.line, format!("`{key}` must be one of {choices:?}, got `{}`", e.value))),
        }
    }

    pub fn list_u32(&self, key: &str, default: &[u32]) -> Result<Vec<u32>> {
        Ok(self
            .parsed(key, "a comma-separated list of integers", |v| {
                v.split(',').map(|s| s.trim().parse().ok()).collect::<Option<Vec<u32>>>()
            })?
            .unwrap_or_else(|| default.to_vec()))
    }

    pub fn expr_opt(&self, key: &str) -> Result<Option<Expr>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => Expr::parse(&e.value).map(Some).map_err(|err| at(&e.file, e.line, err)),
        }
    }

    pub fn expr(&self, key: &str, default: &str) -> Result<Expr> {
        match self.expr_opt(key)? {
            Some(e) => Ok(e),
            None => Expr::parse(default),
        }
    }

    /// Error located at `key`, or unlocated when the key is absent.
    pub fn error(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.entries.get(key) {
            Some(e) => at(&e.file, e.line, format!("`{key}`: {msg}")),
            None => Error::Config(format!("`{key}`: {msg}")),
        }
    }

    /// Rejects keys not matched by `known`.
    pub fn check_keys(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        for (k, e) in &self.entries {
            if !known(k) {
                return Err(at(&e.file, e.line, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    /// Effective assignments, sorted, one per line. Re-parses to the same config.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, e) in &self.entries {
            out.push_str(&format!("{k} = {}\n", e.value));
        }
        out
    }

    /// SHA-256 of [`Config::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Sections present.
    pub fn sections(&self) -> BTreeSet<&str> {
        self.entries.keys().filter_map(|k| k.split('.').next()).collect()
    }
}
