//! Resolved run configuration.
//!
//! Every run starts from the defaults of its command and profile, applies
//! the `key=value` lines of `--config` and then the explicit flags. The
//! result is echoed to `manifest.txt` in the output directory, which can be
//! passed back through `--config` to repeat the run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use mvpformer::model::ModelConfig;

use crate::usage;

pub const MANIFEST: &str = "manifest.txt";
const MODEL_PREFIX: &str = "model.";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    /// Layers defaults, the config file and explicit flags (in that order)
    /// for `command`. Unknown keys in the file are usage errors. Commands
    /// that read the model from a checkpoint pass `model_keys = false`.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        command: &str,
        model_keys: bool,
        profile_flag: Option<&str>,
        seed_flag: Option<u64>,
        config: Option<&Path>,
        defaults: Vec<(&str, String)>,
        flags: Vec<(&str, Option<String>)>,
    ) -> Result<Self> {
        let file = match config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        if let Some(c) = file.get("command") {
            if c != command {
                return Err(usage(format!("config was written by `{c}`, not `{command}`")));
            }
        }
        let profile =
            profile_flag.map(str::to_string).or_else(|| file.get("profile").cloned()).unwrap_or_else(|| "toy".into());
        let model = ModelConfig::profile(&profile).map_err(|e| usage(e.to_string()))?;

        let mut values = BTreeMap::new();
        values.insert("command".to_string(), command.to_string());
        values.insert("profile".to_string(), profile);
        values.insert("seed".to_string(), "0".to_string());
        if model_keys {
            for (k, v) in model.pairs() {
                values.insert(format!("{MODEL_PREFIX}{k}"), v);
            }
        }
        for (k, v) in defaults {
            values.insert(k.to_string(), v);
        }
        for (k, v) in file {
            if !values.contains_key(&k) {
                return Err(usage(format!("unknown config key {k:?} for `{command}`")));
            }
            values.insert(k, v);
        }
        if let Some(s) = seed_flag {
            values.insert("seed".into(), s.to_string());
        }
        for (k, v) in flags {
            debug_assert!(values.contains_key(k), "flag {k} has no default");
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        let s = Self { values };
        s.model()?;
        Ok(s)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| usage(format!("{key}={raw:?}: {e}")))
    }

    /// Optional path-like setting; empty means unset.
    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|e| usage(format!("{key}: {s:?}: {e}"))))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::profile(self.raw("profile")).map_err(|e| usage(e.to_string()))?;
        for (k, v) in &self.values {
            if let Some(key) = k.strip_prefix(MODEL_PREFIX) {
                cfg.set(key, v).map_err(|e| usage(e.to_string()))?;
            }
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn write_manifest(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut text = String::from("# resolved configuration; reuse with --config\n");
        for (k, v) in &self.values {
            text.push_str(&format!("{k}={v}\n"));
        }
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}
