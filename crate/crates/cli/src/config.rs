//! Plain-text `key = value` config files, merged under command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::Failure;

/// Flags that take no value; a config `true` emits the bare flag.
const SWITCHES: [&str; 3] = ["force", "local", "global"];

fn flag_name(arg: &str) -> Option<&str> {
    let name = arg.strip_prefix("--")?;
    Some(name.split_once('=').map_or(name, |(k, _)| k))
}

/// Finds `--config <path>` or `--config=<path>` among the raw arguments.
pub fn config_path(args: &[String]) -> Option<PathBuf> {
    args.iter().enumerate().find_map(|(i, a)| match a.strip_prefix("--config") {
        Some("") => args.get(i + 1).map(PathBuf::from),
        Some(rest) => rest.strip_prefix('=').map(PathBuf::from),
        None => None,
    })
}

/// Parses config text into flag tokens, skipping keys already given on the
/// command line. `local` and `global` count as one key.
pub fn config_tokens(text: &str, explicit: &BTreeSet<String>) -> Result<Vec<String>, Failure> {
    let group = |k: &str| if k == "global" { "local".to_string() } else { k.to_string() };
    let explicit: BTreeSet<String> = explicit.iter().map(|k| group(k)).collect();
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Failure::Validation(format!("config line {}: expected `key = value`", lineno + 1)))?;
        if key.is_empty() || key == "config" {
            return Err(Failure::Validation(format!("config line {}: bad key {key:?}", lineno + 1)));
        }
        if explicit.contains(&group(key)) {
            continue;
        }
        if SWITCHES.contains(&key) {
            match value {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                _ => return Err(Failure::Validation(format!("config line {}: {key} must be true or false", lineno + 1))),
            }
        } else {
            out.push(format!("--{key}"));
            out.push(value.to_string());
        }
    }
    Ok(out)
}

/// Inserts config-file flags right after the subcommand name.
pub fn merge(args: Vec<String>) -> Result<Vec<String>, Failure> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = read(&path)?;
    let explicit: BTreeSet<String> = args.iter().filter_map(|a| flag_name(a)).map(str::to_string).collect();
    let tokens = config_tokens(&text, &explicit)?;
    let Some(sub) = args.iter().skip(1).position(|a| !a.starts_with('-')) else { return Ok(args) };
    let at = sub + 2;
    let mut merged = args[..at].to_vec();
    merged.extend(tokens);
    merged.extend_from_slice(&args[at..]);
    Ok(merged)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}
