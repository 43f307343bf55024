//! Flat `key=value` run configuration: optional config file merged with
//! command-line flags (flags win), the resolved set echoed into every
//! output directory, and the output-root environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::IoFormatError;

pub const OUT_ROOT_ENV: &str = "POSE6D_OUT_ROOT";

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self, IoFormatError> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(IoFormatError::parse(
                    path,
                    idx + 1,
                    format!("expected key=value, got: {line}"),
                ));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Option<T> {
        self.map.get(key).and_then(|v| v.parse().ok())
    }
}

/// Flag beats config file beats default.
pub fn resolve<T: FromStr + Clone>(flag: Option<T>, file: &KvConfig, key: &str, default: T) -> T {
    flag.or_else(|| file.get(key)).unwrap_or(default)
}

/// The run directory: an explicit flag, else `$POSE6D_OUT_ROOT/<command>`,
/// else `./pose6d-out/<command>`.
pub fn out_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p,
        None => match std::env::var(OUT_ROOT_ENV) {
            Ok(root) if !root.is_empty() => PathBuf::from(root).join(command),
            _ => PathBuf::from("pose6d-out").join(command),
        },
    }
}

/// Writes the resolved configuration (sorted `key=value` lines) into the
/// run directory so every run is self-describing.
pub fn echo_config(dir: &Path, entries: &[(String, String)]) -> Result<(), IoFormatError> {
    let mut sorted: Vec<&(String, String)> = entries.iter().collect();
    sorted.sort();
    let mut text = String::new();
    for (k, v) in sorted {
        text.push_str(&format!("{k}={v}\n"));
    }
    crate::write_atomic(&dir.join("config.txt"), text.as_bytes())?;
    Ok(())
}

#[macro_export]
macro_rules! config_entries {
    ($($key:expr => $value:expr),* $(,)?) => {
        vec![$(($key.to_string(), format!("{}", $value))),*]
    };
}
