//! Flat `key = value` configuration files.
//!
//! Keys mirror the field names of the target config; nested records use
//! dotted keys such as `projection.iterations` or `deformer.hidden`. Lists
//! are comma separated, `none` clears an optional value and `#` starts a
//! comment. Unknown or repeated keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::arap::DeformConfig;
use crate::deform::Variant;
use crate::eikonal::EikonalConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_entries(text: &str, path: &Path) -> Result<Vec<ConfigEntry>> {
    let mut out: Vec<ConfigEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Config(format!(
                "{}:{}: `{key}` already set on line {}",
                path.display(),
                i + 1,
                prev.line
            )));
        }
        out.push(ConfigEntry {
            key,
            value: value.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys name records");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

fn parse_scalar(text: &str) -> Value {
    match text {
        "none" | "null" => Value::Null,
        _ => match serde_json::from_str::<Value>(text) {
            Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::String(_))) => v,
            _ => Value::String(text.to_string()),
        },
    }
}

fn parse_value(text: &str, current: &Value) -> Value {
    match current {
        Value::Array(_) => Value::Array(
            text.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(parse_scalar)
                .collect(),
        ),
        _ => parse_scalar(text),
    }
}

/// Flattened `key -> value` view of a config.
pub fn flat_view<T: Serialize>(cfg: &T) -> BTreeMap<String, Value> {
    let mut flat = BTreeMap::new();
    flatten("", &serde_json::to_value(cfg).expect("config serializes"), &mut flat);
    flat
}

/// `base` with every entry applied on top.
pub fn apply_entries<T: Serialize + DeserializeOwned>(base: &T, entries: &[ConfigEntry], path: &Path) -> Result<T> {
    let mut flat = flat_view(base);
    for e in entries {
        let current = flat.get(&e.key).ok_or_else(|| {
            Error::Config(format!("{}:{}: unknown key `{}`", path.display(), e.line, e.key))
        })?;
        let v = parse_value(&e.value, current);
        flat.insert(e.key.clone(), v);
    }
    serde_json::from_value(unflatten(&flat))
        .map_err(|err| Error::Config(format!("{}: {err}", path.display())))
}

/// Render a config in the flat file format.
pub fn render_config<T: Serialize>(cfg: &T) -> String {
    let mut out = String::new();
    for (k, v) in flat_view(cfg) {
        let text = match v {
            Value::Null => "none".to_string(),
            Value::String(s) => s,
            Value::Array(items) => items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "),
            other => other.to_string(),
        };
        out.push_str(&format!("{k} = {text}\n"));
    }
    out
}

pub fn parse_eikonal_config(text: &str, path: &Path) -> Result<EikonalConfig> {
    let cfg: EikonalConfig = apply_entries(&EikonalConfig::default(), &parse_entries(text, path)?, path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// `deformer.variant` (else `default`) selects the variant defaults before
/// other keys apply.
pub fn parse_deform_config(text: &str, path: &Path, default: Variant) -> Result<DeformConfig> {
    let entries = parse_entries(text, path)?;
    let variant = match entries.iter().find(|e| e.key == "deformer.variant") {
        Some(e) => e.value.parse::<Variant>()?,
        None => default,
    };
    let cfg: DeformConfig = apply_entries(&DeformConfig::for_variant(variant), &entries, path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_eikonal_config(path: &Path) -> Result<EikonalConfig> {
    parse_eikonal_config(&read(path)?, path)
}

pub fn load_deform_config(path: &Path, default: Variant) -> Result<DeformConfig> {
    parse_deform_config(&read(path)?, path, default)
}
