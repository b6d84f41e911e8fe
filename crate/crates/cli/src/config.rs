//! `key = value` experiment configuration with flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bbm_core::bbm_sim::OffspringLaw;
use bbm_core::fmt::short_hash;

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BBM_LAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "bbm-out";

/// Keys every command accepts. `out` and `threads` do not affect results and
/// are left out of the hash.
const COMMON: &[(&str, &str)] = &[("seed", "1"), ("threads", "1"), ("out", "")];
const NON_SEMANTIC: &[&str] = &["out", "threads"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key = value, got {raw:?}", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Split a `key=value` flag argument.
pub fn parse_override(arg: &str) -> Result<(String, String), CliError> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Usage(format!("expected key=value, got {arg:?}")))
}

impl ExperimentConfig {
    /// Defaults, then the file, then the overrides (later wins).
    pub fn resolve(
        command: &str,
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = COMMON
            .iter()
            .chain(defaults)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut set = |k: &str, v: &str| -> Result<(), CliError> {
            match values.get_mut(k) {
                Some(slot) => {
                    *slot = v.to_string();
                    Ok(())
                }
                None => Err(CliError::Usage(format!("unknown key {k:?} for `{command}`"))),
            }
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_text(&text)? {
                set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            set(k, v)?;
        }
        Ok(Self {
            command: command.to_string(),
            values,
        })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, CliError> {
        self.str(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("{key} = {:?} is not {what}", self.str(key))))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parsed(key, "a number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CliError::Usage(format!("{key} must be finite")))
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        self.parsed(key, "true or false")
    }

    /// `none` (or empty) maps to `None`.
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.str(key) {
            "" | "none" => Ok(None),
            _ => self.f64(key).map(Some),
        }
    }

    /// Comma-separated numbers; empty gives an empty list.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::Usage(format!("{key}: {s:?} is not a number")))
            })
            .collect()
    }

    pub fn offspring(&self, key: &str) -> Result<OffspringLaw, CliError> {
        OffspringLaw::new(self.f64_list(key)?).map_err(|e| CliError::Usage(format!("{key}: {e}")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.u64("seed")
    }

    pub fn threads(&self) -> Result<usize, CliError> {
        Ok(self.usize("threads")?.max(1))
    }

    /// The `out` key, else the environment variable, else `bbm-out`.
    pub fn out_dir(&self) -> PathBuf {
        match self.str("out") {
            "" => std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            dir => PathBuf::from(dir),
        }
    }

    /// Path-valued key, relative to the output directory when not absolute;
    /// empty selects `fallback` inside the output directory.
    pub fn input_path(&self, key: &str, fallback: &str) -> PathBuf {
        match self.str(key) {
            "" => self.out_dir().join(fallback),
            p => {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    self.out_dir().join(p)
                }
            }
        }
    }

    /// Resolved keys that determine the results, one `key=value` per line.
    pub fn canonical(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (k, v) in &self.values {
            if !NON_SEMANTIC.contains(&k.as_str()) {
                s.push_str(&format!("{k}={v}\n"));
            }
        }
        s
    }

    pub fn hash(&self) -> String {
        short_hash(&self.canonical())
    }

    /// Header embedded in every output file.
    pub fn header(&self) -> serde_json::Value {
        let config: serde_json::Map<String, serde_json::Value> = self
            .values
            .iter()
            .filter(|(k, _)| !NON_SEMANTIC.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        serde_json::json!({
            "command": self.command,
            "config_hash": self.hash(),
            "seed": self.seed().unwrap_or(0),
            "config": config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULTS: &[(&str, &str)] = &[("horizon", "10"), ("replicas", "100")];

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nhorizon = 12\nreplicas=5 # trailing\n\n").unwrap();
        let cfg = ExperimentConfig::resolve(
            "simulate",
            DEFAULTS,
            Some(&path),
            &[("replicas".into(), "7".into())],
        )
        .unwrap();
        assert_eq!(cfg.f64("horizon").unwrap(), 12.0);
        assert_eq!(cfg.usize("replicas").unwrap(), 7);
    }

    #[test]
    fn unknown_key_is_a_usage_error() {
        let err = ExperimentConfig::resolve("simulate", DEFAULTS, None, &[("horizn".into(), "1".into())]);
        assert!(matches!(err, Err(CliError::Usage(_))));
        assert!(matches!(parse_config_text("no equals sign"), Err(CliError::Usage(_))));
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let a = ExperimentConfig::resolve("simulate", DEFAULTS, None, &[("out".into(), "a".into())]).unwrap();
        let b = ExperimentConfig::resolve(
            "simulate",
            DEFAULTS,
            None,
            &[("out".into(), "b".into()), ("threads".into(), "4".into())],
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.header(), b.header());
        let c = ExperimentConfig::resolve("simulate", DEFAULTS, None, &[("seed".into(), "2".into())]).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn lists_and_options() {
        let cfg = ExperimentConfig::resolve(
            "x",
            &[("grid", "0.1, 0.5,0.9"), ("barrier", "none"), ("empty", "")],
            None,
            &[],
        )
        .unwrap();
        assert_eq!(cfg.f64_list("grid").unwrap(), vec![0.1, 0.5, 0.9]);
        assert_eq!(cfg.opt_f64("barrier").unwrap(), None);
        assert!(cfg.f64_list("empty").unwrap().is_empty());
    }
}
