//! `--config` files: one TOML table per subcommand, keyed like the long
//! flags with underscores. Flags given on the command line win.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub struct ConfigFile {
    path: PathBuf,
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            table,
        })
    }

    /// The `[section]` table as JSON, or an empty object.
    pub fn section(&self, name: &str) -> Result<Value> {
        match self.table.get(name) {
            None => Ok(Value::Object(Default::default())),
            Some(v @ toml::Value::Table(_)) => Ok(serde_json::to_value(v)?),
            Some(_) => bail!("{}: [{name}] must be a table", self.path.display()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Recursively overlays `top` onto `base`; non-object values replace.
pub fn deep_merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Flags left unset serialize as null, `[]` or `false`; drop them so they
/// do not mask the config file.
fn given(flags: Value) -> Value {
    match flags {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !matches!(v, Value::Null | Value::Bool(false)) && v.as_array().is_none_or(|a| !a.is_empty()))
                .collect(),
        ),
        v => v,
    }
}

/// Merges the flags given on the command line over the config section
/// for `name`.
pub fn resolve<T: Serialize + DeserializeOwned>(cfg: Option<&ConfigFile>, name: &str, flags: &T) -> Result<T> {
    let Some(cfg) = cfg else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let mut merged = cfg.section(name)?;
    deep_merge(&mut merged, given(serde_json::to_value(flags)?));
    serde_json::from_value(merged).with_context(|| format!("{}: [{name}]", cfg.path().display()))
}
