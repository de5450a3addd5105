//! Plain `key = value` configuration files. `#` starts a comment; keys are
//! the field names listed by [`EngineConfig::entries`].

use std::path::Path;

use ssm_core::EngineConfig;

use crate::{read_text, Error, Result};

/// Applies every assignment in `text` on top of the defaults.
pub fn parse(text: &str, origin: &Path) -> Result<EngineConfig> {
    let mut cfg = EngineConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected `key = value`", n + 1)))?;
        cfg.set(key.trim(), value)
            .map_err(|e| Error::format(origin, format!("line {}: {e}", n + 1)))?;
    }
    cfg.validate().map_err(|e| Error::format(origin, e.to_string()))?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<EngineConfig> {
    parse(&read_text(path)?, path)
}

/// Every field with its current value, one per line; parses back to `cfg`.
pub fn render(cfg: &EngineConfig) -> String {
    cfg.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
