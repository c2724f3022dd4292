//! `--config FILE` support: keys from the file become `--key=value` flags
//! unless the same flag is already on the command line.

use std::collections::HashSet;
use std::ffi::OsString;

use topogan::kv::parse_kv;

use crate::UsageError;

fn flag_name(arg: &str) -> Option<&str> {
    let body = arg.strip_prefix("--")?;
    Some(body.split_once('=').map_or(body, |(name, _)| name))
}

/// Removes `--config` from `args` and appends the file's entries as flags.
/// Keys may use `_` or `-`.
pub fn expand(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.to_str() {
            Some("--config") => match it.next() {
                Some(p) => path = Some(p),
                None => return Err(UsageError("--config needs a file path".into()).into()),
            },
            Some(s) if s.starts_with("--config=") => path = Some(s["--config=".len()..].into()),
            _ => out.push(arg),
        }
    }
    let Some(path) = path else { return Ok(out) };

    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let pairs = parse_kv(&text).map_err(|e| UsageError(format!("{}: {e}", path.to_string_lossy())))?;
    let given: HashSet<String> = out
        .iter()
        .filter_map(|a| a.to_str().and_then(flag_name).map(str::to_string))
        .collect();
    for (key, value) in pairs {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err(UsageError("config files cannot include other config files".into()).into());
        }
        if !given.contains(&flag) {
            out.push(format!("--{flag}={value}").into());
        }
    }
    Ok(out)
}
