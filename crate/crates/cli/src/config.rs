//! Flat `key = value` config files. Keys are long flag names; the file is
//! expanded into flags placed before the command line, so explicit flags win.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::output::fmt_f64;

/// Flags that pick the same grid two ways. A member given on the command
/// line suppresses its partner from the file.
const ALTERNATIVES: &[[&str; 2]] = &[["kappa", "kappa-log"], ["nth", "nth-log"], ["ratio", "ratio-log"]];

fn on_command_line(cli: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    cli.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Parses `text` into `--key=value` flags, skipping keys whose alternative
/// appears in `cli`.
pub fn expand(text: &str, cli: &[String]) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`, got `{line}`", lineno + 1))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(format!("config line {}: bad key `{key}`", lineno + 1));
        }
        let shadowed = ALTERNATIVES
            .iter()
            .any(|pair| pair.contains(&key.as_str()) && pair.iter().any(|k| *k != key && on_command_line(cli, k)));
        if !shadowed {
            out.push(format!("--{key}={}", value.trim()));
        }
    }
    Ok(out)
}

pub fn expand_file(path: &Path, cli: &[String]) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    expand(&text, cli)
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) if n.is_f64() => n.as_f64().map(fmt_f64),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(items.iter().filter_map(scalar).collect::<Vec<_>>().join(",")),
        Value::Object(_) => None,
    }
}

/// Effective configuration in the same format [`expand`] reads.
pub fn dump<T: Serialize>(config: &T) -> Result<String, String> {
    let value = serde_json::to_value(config).map_err(|e| e.to_string())?;
    let Value::Object(map) = value else {
        return Err("config is not a key-value record".into());
    };
    let mut text = String::new();
    for (k, v) in &map {
        if let Some(s) = scalar(v) {
            text.push_str(&format!("{k} = {s}\n"));
        }
    }
    Ok(text)
}
