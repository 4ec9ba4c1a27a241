//! Flat `key = value` model config files.
//!
//! ```text
//! name = T
//! c1 = 64
//! cprime = 16
//! l1 = 4
//! ...
//! ```
//!
//! Blank lines and `#` comments are ignored. `kernel`, `ablation` and
//! `in_channels` are optional and only written when they differ from the
//! defaults.

use std::fs;
use std::path::Path;

use dcnv3_core::dcn::Ablation;
use dcnv3_core::model::{ModelConfig, StackConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("line {line}: invalid value {value:?} for `{key}`")]
    Value { line: usize, key: String, value: String },
    #[error("name {0:?} cannot be stored (must be non-empty, single-line, no `#`, no surrounding spaces)")]
    BadName(String),
}

const REQUIRED: [&str; 11] =
    ["name", "c1", "cprime", "l1", "l2", "l3", "l4", "ffn_ratio", "layer_scale", "num_classes", "seed"];
const OPTIONAL: [&str; 3] = ["kernel", "ablation", "in_channels"];

/// Serializes `cfg`. Fails only for names that would not read back unchanged.
pub fn to_string(cfg: &ModelConfig) -> Result<String, ConfigError> {
    let name = &cfg.name;
    if name.is_empty() || name.contains(['\n', '\r', '#']) || name.trim() != name {
        return Err(ConfigError::BadName(name.clone()));
    }
    let s = &cfg.stack;
    let mut out = format!(
        "name = {name}\nc1 = {}\ncprime = {}\nl1 = {}\nl2 = {}\nl3 = {}\nl4 = {}\nffn_ratio = {}\nlayer_scale = {}\nnum_classes = {}\nseed = {}\n",
        s.c1, s.cprime, s.depths[0], s.depths[1], s.depths[2], s.depths[3], cfg.ffn_ratio, cfg.layer_scale,
        cfg.num_classes, cfg.seed
    );
    if cfg.kernel != 3 {
        out += &format!("kernel = {}\n", cfg.kernel);
    }
    if cfg.ablation != Ablation::Dcnv3 {
        out += &format!("ablation = {}\n", cfg.ablation.name());
    }
    if cfg.in_channels != 3 {
        out += &format!("in_channels = {}\n", cfg.in_channels);
    }
    Ok(out)
}

/// Parses a config document. The stack is not validated here.
pub fn from_str(text: &str) -> Result<ModelConfig, ConfigError> {
    let mut values: Vec<(&'static str, usize, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .filter(|(k, v)| !k.is_empty() && !v.is_empty())
            .ok_or_else(|| ConfigError::Syntax { line, text: raw.to_string() })?;
        let known = REQUIRED
            .iter()
            .chain(&OPTIONAL)
            .find(|k| **k == key)
            .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
        if values.iter().any(|(k, _, _)| k == known) {
            return Err(ConfigError::Duplicate { line, key: key.to_string() });
        }
        values.push((known, line, value));
    }
    let find = |key: &'static str| values.iter().find(|(k, _, _)| *k == key).map(|&(_, l, v)| (l, v));
    let bad = |key: &str, line: usize, value: &str| ConfigError::Value {
        line,
        key: key.to_string(),
        value: value.to_string(),
    };
    let num = |key: &'static str| -> Result<u64, ConfigError> {
        let (line, v) = find(key).ok_or(ConfigError::Missing(key))?;
        v.parse::<u64>().map_err(|_| bad(key, line, v))
    };
    let size = |key: &'static str| num(key).map(|v| v as usize);

    let (_, name) = find("name").ok_or(ConfigError::Missing("name"))?;
    let stack = StackConfig {
        c1: size("c1")?,
        cprime: size("cprime")?,
        depths: [size("l1")?, size("l2")?, size("l3")?, size("l4")?],
    };
    let mut cfg = ModelConfig::new(stack);
    cfg.name = name.to_string();
    cfg.ffn_ratio = size("ffn_ratio")?;
    let (line, ls) = find("layer_scale").ok_or(ConfigError::Missing("layer_scale"))?;
    cfg.layer_scale = ls.parse().map_err(|_| bad("layer_scale", line, ls))?;
    cfg.num_classes = size("num_classes")?;
    cfg.seed = num("seed")?;
    if find("kernel").is_some() {
        cfg.kernel = size("kernel")?;
    }
    if let Some((line, v)) = find("ablation") {
        cfg.ablation = Ablation::parse(v).ok_or_else(|| bad("ablation", line, v))?;
    }
    if find("in_channels").is_some() {
        cfg.in_channels = size("in_channels")?;
    }
    Ok(cfg)
}

pub fn save(path: &Path, cfg: &ModelConfig) -> anyhow::Result<()> {
    fs::write(path, to_string(cfg)?)?;
    Ok(())
}

pub fn load(path: &Path) -> anyhow::Result<ModelConfig> {
    let text = fs::read_to_string(path)?;
    from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
