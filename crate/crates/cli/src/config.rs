//! Run configuration: defaults, overlaid by a JSON config file, overlaid by
//! command-line flags. The merged result is written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use pinsert_core::datasynth::DatasetConfig;
use pinsert_core::denoiser::train::{sparse_policy, TrainConfig};
use pinsert_core::metrics::BenchConfig;
use pinsert_core::SamplingPolicy;

pub const SNAPSHOT_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    /// Input paths the run read from.
    pub inputs: BTreeMap<String, String>,
    pub dataset: DatasetConfig,
    pub policy: SamplingPolicy,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let train = if command == "train-student" {
            TrainConfig::stage2()
        } else {
            TrainConfig::stage1()
        };
        Self {
            command: command.to_string(),
            seed: 0,
            inputs: BTreeMap::new(),
            dataset: DatasetConfig::default(),
            policy: SamplingPolicy::default(),
            train,
            bench: BenchConfig::default(),
        }
    }

    /// Defaults, then the config file (if any), then the master seed.
    pub fn resolve(command: &str, file: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::defaults(command))?;
        let mut file_seed = None;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let overlay: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            file_seed = overlay.get("seed").and_then(Value::as_u64);
            merge(&mut base, overlay);
        }
        base["command"] = Value::String(command.to_string());
        let mut cfg: RunConfig = serde_json::from_value(base).context("config does not match the schema")?;
        if let Some(s) = seed.or(file_seed) {
            cfg.set_seed(s);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.bench.seed = seed;
    }

    /// Stage-1 records keep their stored point maps for training, so they
    /// default to training-style prompts.
    pub fn default_synth_policy(&mut self, explicit: bool) {
        if !explicit && self.dataset.stage == 1 {
            self.policy = sparse_policy();
        }
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}
