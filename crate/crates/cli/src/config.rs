//! `--config <file>`: TOML keys become flags placed ahead of the command-line
//! flags, so anything given on the command line overrides the file.

use std::ffi::OsString;
use std::path::PathBuf;

use toml::Value;

/// Problem with the invocation itself; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn scalar(key: &str, v: &Value) -> Result<String, UsageError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        _ => Err(UsageError(format!("config key {key:?}: expected a string or number"))),
    }
}

/// Flags for one TOML table, in key order.
pub fn table_flags(table: &toml::Table) -> Result<Vec<OsString>, UsageError> {
    let mut out = Vec::new();
    for (key, v) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(UsageError("config files cannot name another config".into()));
        }
        match v {
            Value::Boolean(true) => out.push(flag.into()),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                let parts = items.iter().map(|x| scalar(key, x)).collect::<Result<Vec<_>, _>>()?;
                out.push(format!("{flag}={}", parts.join(",")).into());
            }
            other => out.push(format!("{flag}={}", scalar(key, other)?).into()),
        }
    }
    Ok(out)
}

/// Inserts the config file's flags right after the subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, UsageError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    if args.len() < 2 {
        return Ok(args);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
    let mut out = args[..2].to_vec();
    out.extend(table_flags(&table)?);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_become_flags() {
        let t: toml::Table = "seed = 3\nedge_ratio = 0.2\nwidths = [8, 16]\noverlay = true\nquiet = false\nout = \"x\"".parse().unwrap();
        let flags: Vec<String> = table_flags(&t).unwrap().into_iter().map(|s| s.into_string().unwrap()).collect();
        assert!(flags.contains(&"--seed=3".to_string()));
        assert!(flags.contains(&"--edge-ratio=0.2".to_string()));
        assert!(flags.contains(&"--widths=8,16".to_string()));
        assert!(flags.contains(&"--overlay".to_string()));
        assert!(flags.contains(&"--out=x".to_string()));
        assert!(!flags.iter().any(|f| f.contains("quiet")));
    }

    #[test]
    fn nested_tables_are_rejected() {
        let t: toml::Table = "[train]\nseed = 1".parse().unwrap();
        assert!(table_flags(&t).is_err());
    }
}
