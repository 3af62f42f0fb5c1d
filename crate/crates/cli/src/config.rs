//! TOML config files mirroring the flags, and the archived effective config.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Overlay the flags that were given onto the `[section]` of the config file.
pub fn merge<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: Option<&Value>,
    section: &str,
) -> Result<T> {
    let mut base = match file.and_then(|f| f.get(section)) {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => bail!("config section [{section}] must be a table"),
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base))
        .with_context(|| format!("invalid settings for `{section}`"))
}

/// Parse a config file into a JSON value; only `out` and subcommand tables are
/// allowed at the top level.
pub fn load(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let value = serde_json::to_value(table)?;
    Ok(value)
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().map(strip_nulls).collect()),
        other => other,
    }
}

/// Write `config.toml` with the effective settings of one subcommand. The
/// output directory is left out so runs into different directories compare equal.
pub fn echo<T: Serialize>(out: &Path, section: &str, settings: &T) -> Result<()> {
    let mut root = Map::new();
    root.insert(section.into(), strip_nulls(serde_json::to_value(settings)?));
    let text = toml::to_string(&Value::Object(root))?;
    fs::write(out.join("config.toml"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Default, Debug, PartialEq)]
    #[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
    struct Demo {
        p: Option<f64>,
        seed: Option<u64>,
    }

    #[test]
    fn flags_override_file() {
        let file: Value = serde_json::json!({"demo": {"p": 2.0, "seed": 3}});
        let flags = Demo {
            p: None,
            seed: Some(9),
        };
        let m = merge(&flags, Some(&file), "demo").unwrap();
        assert_eq!(
            m,
            Demo {
                p: Some(2.0),
                seed: Some(9)
            }
        );
        let bad: Value = serde_json::json!({"demo": {"q": 1}});
        assert!(merge(&flags, Some(&bad), "demo").is_err());
    }
}
