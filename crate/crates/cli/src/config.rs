//! Layered configuration: built-in defaults, then a JSON file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::commands::CliError;

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `defaults` overlaid with the keys present in `file`. Unknown keys are
/// rejected by the target type's deserializer when it denies them.
pub fn load<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults).map_err(CliError::internal)?).map_err(CliError::internal)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
    let over: Value = serde_json::from_str(&text).map_err(|e| CliError::config(path, e))?;
    let mut base = serde_json::to_value(defaults).map_err(CliError::internal)?;
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| CliError::config(path, e))
}
