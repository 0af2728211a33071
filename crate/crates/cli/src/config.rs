//! Flat key/value configuration: a TOML file, then `--set key=value`
//! overrides, then dedicated flags. Each typed section picks the keys it
//! knows; keys no section knows are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Usage;

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: Map<String, Value>,
}

fn parse_override(raw: &str) -> Result<(String, Value), Usage> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Usage(format!("--set expects key=value, got `{raw}`")))?;
    let key = key.trim().to_string();
    if key.is_empty() {
        return Err(Usage(format!("--set has an empty key in `{raw}`")));
    }
    // Bare words such as `mixed` are taken as strings.
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(toml_to_json)
        .unwrap_or_else(|| Value::String(value.trim().to_string()));
    Ok((key, parsed))
}

fn toml_to_json(v: toml::Value) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

impl Settings {
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, Usage> {
        let mut values = Map::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| Usage(format!("config {}: {e}", path.display())))?;
            for (k, v) in table {
                if v.is_table() {
                    return Err(Usage(format!(
                        "config {}: nested table `{k}` (the format is flat key = value)",
                        path.display()
                    )));
                }
                values.insert(k, toml_to_json(v));
            }
        }
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("serializable setting");
        self.values.insert(key.to_string(), v);
    }

    pub fn set_if<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Fails on keys that none of `known` accepts.
    pub fn check_known(&self, known: &[BTreeSet<String>]) -> Result<(), Usage> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !known.iter().any(|s| s.contains(*k)))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Usage(format!("unknown configuration keys: {}", unknown.join(", "))))
        }
    }

    /// Defaults of `T`, overlaid with every matching key.
    pub fn section<T: Serialize + DeserializeOwned + Default>(&self, name: &str) -> Result<T, Usage> {
        let Value::Object(mut base) = serde_json::to_value(T::default()).expect("section serializes") else {
            unreachable!("sections are structs");
        };
        for (k, v) in &self.values {
            if base.contains_key(k) {
                base.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(Value::Object(base)).map_err(|e| Usage(format!("{name} configuration: {e}")))
    }
}

pub fn keys_of<T: Serialize + Default>() -> BTreeSet<String> {
    match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Merges serialized sections into one flat object for manifests.
pub fn resolved<T: Serialize>(sections: &[&T]) -> Value {
    let mut out = Map::new();
    for s in sections {
        if let Ok(Value::Object(m)) = serde_json::to_value(s) {
            out.extend(m);
        }
    }
    Value::Object(out)
}
