//! Flat `key = value` configuration files and setting resolution.
//!
//! Precedence, highest first: command-line flag, environment variable
//! (service URLs only), config file, built-in default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const INPAINT_URL_ENV: &str = "OVDPROBE_INPAINT_URL";
pub const DETECT_URL_ENV: &str = "OVDPROBE_DETECT_URL";

pub const KNOWN_KEYS: [&str; 12] = [
    "inpaint_url",
    "detect_url",
    "preset",
    "seed",
    "concurrency",
    "max_retries",
    "iou",
    "score_floor",
    "nms_iou",
    "min_overlap",
    "detect_score_floor",
    "heatmap_score_floor",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// ignored. Values may be wrapped in double quotes.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", origin.display(), i + 1);
            };
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("{}:{}: unknown key `{key}`", origin.display(), i + 1);
            }
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
            values.insert(key, v.to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text, path)
    }
}

/// Resolves settings and remembers where each value came from, for the
/// stage manifest.
#[derive(Debug, Default)]
pub struct Resolver {
    pub file: ConfigFile,
    pub resolved: BTreeMap<String, serde_json::Value>,
}

impl Resolver {
    pub fn new(file: ConfigFile) -> Self {
        Self {
            file,
            resolved: BTreeMap::new(),
        }
    }

    /// Numbers and booleans are recorded as such, everything else as text.
    fn record(&mut self, key: &str, value: String, source: &str) {
        let value = serde_json::from_str::<serde_json::Value>(&value)
            .ok()
            .filter(|v| v.is_number() || v.is_boolean())
            .unwrap_or(serde_json::Value::String(value));
        self.resolved.insert(
            key.to_string(),
            serde_json::json!({ "value": value, "source": source }),
        );
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>, env: Option<&str>) -> Result<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            self.record(key, v.to_string(), "flag");
            return Ok(Some(v));
        }
        if let Some(var) = env {
            if let Ok(raw) = std::env::var(var) {
                if !raw.is_empty() {
                    let v = raw
                        .parse()
                        .map_err(|e| anyhow::anyhow!("environment variable {var}: {e}"))?;
                    self.record(key, raw, "env");
                    return Ok(Some(v));
                }
            }
        }
        if let Some(raw) = self.file.values.get(key).cloned() {
            let v = raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}: {e}"))?;
            self.record(key, raw, "config");
            return Ok(Some(v));
        }
        Ok(None)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, env: Option<&str>, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        match self.lookup(key, flag, env)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, default.to_string(), "default");
                Ok(default)
            }
        }
    }

    /// Like `get` without a default; fails when nothing provides a value.
    pub fn require<T>(&mut self, key: &str, flag: Option<T>, env: Option<&str>, hint: &str) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        self.lookup(key, flag, env)?
            .ok_or_else(|| anyhow::anyhow!("no value for {key}; {hint}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_files() {
        let text = "# run settings\nseed = 42\npreset=\"V3\"  # inline\n\n";
        let c = ConfigFile::parse(text, Path::new("run.conf")).unwrap();
        assert_eq!(c.values["seed"], "42");
        assert_eq!(c.values["preset"], "V3");
        assert!(ConfigFile::parse("bogus = 1", Path::new("x")).is_err());
        assert!(ConfigFile::parse("seed 42", Path::new("x")).is_err());
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let c = ConfigFile::parse("seed = 7\niou = 0.3", Path::new("x")).unwrap();
        let mut r = Resolver::new(c);
        assert_eq!(r.get("seed", Some(1u64), None, 0).unwrap(), 1);
        assert_eq!(r.get("iou", None, None, 0.5f64).unwrap(), 0.3);
        assert_eq!(r.get("nms_iou", None, None, 0.5f64).unwrap(), 0.5);
        assert_eq!(r.resolved["iou"]["source"], "config");
        assert!(r.require::<String>("detect_url", None, None, "pass --service-url").is_err());
    }

    #[test]
    fn bad_config_value_is_an_error() {
        let c = ConfigFile::parse("seed = many", Path::new("x")).unwrap();
        assert!(Resolver::new(c).get("seed", None, None, 0u64).is_err());
    }
}
