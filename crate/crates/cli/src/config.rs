//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use spoofsmith::train::{SplitConfig, TrainConfig};

/// File the resolved configuration is written to in every output directory.
pub const CONFIG_FILE: &str = "config.toml";

/// An invalid invocation: bad flag combination or configuration file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Square image side in pixels.
    pub res: usize,
    pub channels: usize,
    /// Multiplier on every layer width.
    pub width_scale: f64,
    /// Units in the classifier's hidden dense layer.
    pub head_units: usize,
    pub z_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            res: 64,
            channels: 3,
            width_scale: 0.25,
            head_units: 256,
            z_dim: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Everything a command needs. `seed` is copied into the training and split
/// sections, so one number fixes the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    /// Images produced by `gen-toy` or `synth`.
    pub count: usize,
    /// Decision threshold on the bona fide score.
    pub threshold: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let (count, train) = match command {
            "gen-toy" => (500, TrainConfig::gan()),
            "train-pad" | "eval" => (0, TrainConfig::classifier()),
            _ => (TrainConfig::gan().target_synthetic, TrainConfig::gan()),
        };
        RunConfig {
            command: command.to_string(),
            seed: 0,
            count,
            threshold: spoofsmith::eval::DEFAULT_THRESHOLD,
            model: ModelConfig::default(),
            train,
            split: SplitConfig::default(),
            paths: Paths::default(),
        }
    }

    pub fn out_dir(&self) -> Result<&Path, UsageError> {
        self.paths
            .out
            .as_deref()
            .ok_or_else(|| UsageError("an output directory is required (--out)".into()))
    }

    /// Creates the output directory and writes the resolved configuration.
    pub fn echo(&self) -> anyhow::Result<PathBuf> {
        let dir = self.out_dir()?;
        fs::create_dir_all(dir)?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }

    pub fn to_toml(&self) -> Result<String, UsageError> {
        toml::to_string_pretty(self)
            .map_err(|e| UsageError(format!("config does not serialize: {e}")))
    }
}

/// Values from the command line, as a partial document.
#[derive(Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    /// Sets `section.key` (or a top-level key when `section` is empty) if
    /// the flag was given.
    pub fn set<V: Serialize>(&mut self, section: &str, key: &str, value: Option<V>) -> &mut Self {
        let Some(v) = value else { return self };
        let v = serde_json::to_value(v).expect("flag values serialize");
        if section.is_empty() {
            self.0.insert(key.to_string(), v);
        } else if let Value::Object(m) = self
            .0
            .entry(section.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
        {
            m.insert(key.to_string(), v);
        }
        self
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Layers defaults, the config file and the flags, in that order.
pub fn resolve(
    command: &str,
    file: Option<&Path>,
    flags: Overrides,
) -> Result<RunConfig, UsageError> {
    let mut doc = serde_json::to_value(RunConfig::defaults(command)).expect("defaults serialize");
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        let parsed: toml::Value =
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let parsed = serde_json::to_value(parsed).expect("toml values map to json");
        merge(&mut doc, parsed);
    }
    merge(&mut doc, Value::Object(flags.0));
    doc["command"] = Value::String(command.to_string());
    let seed = doc["seed"].clone();
    doc["train"]["seed"] = seed.clone();
    doc["split"]["seed"] = seed;
    let cfg: RunConfig = serde_json::from_value(doc)
        .map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
    cfg.train
        .validate()
        .and_then(|_| cfg.split.validate())
        .map_err(|e| UsageError(e.to_string()))?;
    if !(cfg.threshold.is_finite()) {
        return Err(UsageError(format!(
            "threshold must be finite, got {}",
            cfg.threshold
        )));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(
            &file,
            "seed = 5\ncount = 7\n[model]\nres = 32\nwidth_scale = 0.5\n",
        )
        .unwrap();
        let mut flags = Overrides::default();
        flags.set("model", "res", Some(48usize));
        let cfg = resolve("train-gan", Some(&file), flags).unwrap();
        assert_eq!(cfg.model.res, 48);
        assert_eq!(cfg.model.width_scale, 0.5);
        assert_eq!(cfg.count, 7);
        assert_eq!((cfg.train.seed, cfg.split.seed), (5, 5));
        assert_eq!(cfg.train.real_per_iter, 200);
    }

    #[test]
    fn echoed_config_resolves_to_itself() {
        let mut flags = Overrides::default();
        flags
            .set("", "seed", Some(11u64))
            .set("paths", "out", Some("somewhere"));
        let cfg = resolve("train-pad", None, flags).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join(CONFIG_FILE);
        fs::write(&file, cfg.to_toml().unwrap()).unwrap();
        assert_eq!(
            resolve("train-pad", Some(&file), Overrides::default()).unwrap(),
            cfg
        );
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.toml");
        fs::write(&file, "[train]\nlearning_rat = 0.1\n").unwrap();
        assert!(resolve("train-gan", Some(&file), Overrides::default()).is_err());
    }

    #[test]
    fn command_defaults() {
        assert_eq!(RunConfig::defaults("synth").count, 10_000);
        assert_eq!(RunConfig::defaults("train-gan").train.real_per_iter, 200);
        assert_eq!(RunConfig::defaults("train-pad").model.width_scale, 0.25);
        assert_eq!(RunConfig::defaults("eval").threshold, 0.5);
        assert_eq!(RunConfig::defaults("train-pad").split.train_fraction, 0.8);
    }
}
