//! `key = value` run files and their merge with command-line flags.

use std::fs;
use std::path::Path;

use joint_ood::{Error, Result};

/// Parse a run file. Blank lines and `#` comments are skipped; every other
/// line must be `key = value`.
pub fn read_run_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected `key = value`, found {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// File values first, then flags, so flags win. Keys outside `known` are
/// rejected.
pub fn merge(
    file: Option<&Path>,
    flags: Vec<(&'static str, Option<String>)>,
    known: &[&str],
) -> Result<Vec<(String, String)>> {
    let mut pairs = match file {
        Some(p) => read_run_file(p)?,
        None => Vec::new(),
    };
    for (k, _) in &pairs {
        if !known.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
    }
    pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Ok(pairs)
}

/// Last value wins.
pub fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}
