//! JSON config files turned into extra command-line flags.
//!
//! Config values are inserted ahead of the user's own flags; since every
//! flag may be repeated and the last occurrence wins, the command line
//! overrides the file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

/// Global flags that take a value, in `--name` form.
const GLOBAL_VALUED: [&str; 4] = ["--seed", "--parallelism", "--output-dir", "--config"];

/// Index of the subcommand token in `argv`, skipping global flags.
pub fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if !a.starts_with('-') {
            return Some(i);
        }
        i += if GLOBAL_VALUED.contains(&a.as_ref()) { 2 } else { 1 };
    }
    None
}

/// Value of a `--config` given before the subcommand.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let end = subcommand_index(argv).unwrap_or(argv.len());
    let mut found = None;
    for i in 1..end {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            found = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    found
}

fn flag(key: &str) -> String {
    format!("--{}", key.replace('_', "-"))
}

fn push_flags(out: &mut Vec<OsString>, obj: &Map<String, Value>, skip_objects: bool) -> Result<()> {
    for (key, value) in obj {
        match value {
            Value::Object(_) if skip_objects => {}
            Value::Bool(true) => out.push(flag(key).into()),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => {
                out.push(flag(key).into());
                out.push(n.to_string().into());
            }
            Value::String(s) => {
                out.push(flag(key).into());
                out.push(s.into());
            }
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| match v {
                        Value::Number(n) => Ok(n.to_string()),
                        Value::String(s) => Ok(s.clone()),
                        other => bail!("config key {key}: unsupported list item {other}"),
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(flag(key).into());
                out.push(parts.join(",").into());
            }
            Value::Object(_) => {
                bail!("config key {key}: nested objects are only allowed at top level")
            }
        }
    }
    Ok(())
}

/// Rewrites `argv` with the config's defaults inserted and `--config`
/// removed.
pub fn expand(argv: &[OsString], config: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading config {}", config.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", config.display()))?;
    let Value::Object(root) = value else {
        bail!("config {} must be a JSON object", config.display());
    };

    let mut stripped = Vec::with_capacity(argv.len());
    let mut i = 0;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            i += 2;
            continue;
        }
        if a.starts_with("--config=") {
            i += 1;
            continue;
        }
        stripped.push(argv[i].clone());
        i += 1;
    }

    let sub = subcommand_index(&stripped).context("no subcommand given")?;
    let name = stripped[sub].to_string_lossy().into_owned();

    let mut out = vec![stripped[0].clone()];
    push_flags(&mut out, &root, true)?;
    out.extend_from_slice(&stripped[1..=sub]);
    match root.get(&name) {
        Some(Value::Object(sub_obj)) => push_flags(&mut out, sub_obj, false)?,
        Some(_) => bail!("config key {name} must be an object"),
        None => {}
    }
    out.extend_from_slice(&stripped[sub + 1..]);
    Ok(out)
}
