//! JSON configuration loading. A top-level `"preset"` key names a built-in
//! configuration; the remaining keys override its fields one by one.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{Common, Failure};

pub fn config_path(common: &Common) -> Result<&Path, Failure> {
    common
        .config
        .as_deref()
        .ok_or_else(|| Failure::config("--config is required"))
}

pub fn out_dir(common: &Common) -> Result<&Path, Failure> {
    common.out.as_deref().ok_or_else(|| Failure::config("--out is required"))
}

pub fn read_object(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Failure::config(format!("config {} must be a JSON object", path.display()))),
        Err(e) => Err(Failure::config(format!("invalid JSON in {}: {e}", path.display()))),
    }
}

/// Remove `key` from `map` and parse it as `T`.
pub fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>, Failure> {
    map.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| Failure::config(format!("field `{key}`: {e}"))))
        .transpose()
}

/// Expand an optional preset and deserialize, rejecting unknown keys.
pub fn with_preset<T>(mut map: Map<String, Value>, preset: fn(&str) -> Option<T>) -> Result<T, Failure>
where
    T: Serialize + DeserializeOwned,
{
    if let Some(name) = take::<String>(&mut map, "preset")? {
        let base = preset(&name).ok_or_else(|| Failure::config(format!("unknown preset `{name}`")))?;
        let Value::Object(mut merged) = serde_json::to_value(base).expect("configs serialize") else {
            unreachable!("configs serialize to objects");
        };
        merged.extend(map);
        map = merged;
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Failure::config(e.to_string()))
}

/// Paths inside a config are relative to the config file.
pub fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}
