//! Line-oriented `key=value` text with `#` comments.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

/// Parses `key=value` lines in order. Blank lines and text after `#` are
/// ignored; keys and values are trimmed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(KvError { line: i + 1, message: format!("expected key=value, got {line:?}") });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(KvError { line: i + 1, message: "empty key".into() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        writeln!(s, "{k}={v}").unwrap();
    }
    s
}
