//! Flat `key = value` configuration.
//!
//! Keys name fields of the command's config struct; nested structs use
//! dotted keys (`synth.queries = 4000`). Values are read as JSON when they
//! parse as JSON and as plain strings otherwise, so `levels = [0, 0.5, 1]`
//! and `loss = bixse` both work. Later entries win, which is how flags
//! override the file.

use std::path::Path;
use std::str::FromStr;

use rankloss::losses::LossKind;
use rankloss::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub type Overrides = Vec<(String, String)>;

pub fn parse_kv(text: &str, path: &Path) -> Result<Overrides> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_kv(&text, path)
}

/// `key=value` from a `--set` flag.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| Error::ConfigInvalid(format!("`{s}` is not key=value")))
}

fn parse_value(key: &str, raw: &str) -> Result<Value> {
    if key == "loss" || key.ends_with(".loss") {
        let kind = LossKind::from_str(raw)?;
        return Ok(Value::String(kind.name().to_owned()));
    }
    Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned())))
}

/// Applies `overrides` on top of `base` and deserializes the result.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, overrides: &[(String, String)]) -> Result<T> {
    let mut root = serde_json::to_value(base).expect("config serializes");
    for (key, raw) in overrides {
        let value = parse_value(key, raw)?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().unwrap();
        let mut node = &mut root;
        let mut parent = "";
        for p in &parts {
            node = node
                .get_mut(*p)
                .filter(|n| n.is_object())
                .ok_or_else(|| Error::ConfigInvalid(format!("unknown config key `{key}`")))?;
            parent = p;
        }
        let obj = node.as_object_mut().expect("checked above");
        // `instructions` is a free-form map; everything else is a fixed field
        if !obj.contains_key(last) && parent != "instructions" {
            return Err(Error::ConfigInvalid(format!("unknown config key `{key}`")));
        }
        obj.insert(last.to_owned(), value);
    }
    serde_json::from_value(root).map_err(|e| Error::ConfigInvalid(e.to_string()))
}
