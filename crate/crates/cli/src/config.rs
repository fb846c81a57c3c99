//! Run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fhnet::model::ModelConfig;
use fhnet::sigproc::PreprocessConfig;
use fhnet::synth::MixConfig;
use fhnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub records: usize,
    /// Template for every record; record `i` is generated with seed `seed + i`.
    pub mix: MixConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            records: 4,
            mix: MixConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Everything a run needs. Seeds are set once, at the top level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub preprocess: PreprocessConfig,
    pub paths: Paths,
}

fn has_key(v: &serde_json::Value, section: &str, key: &str) -> bool {
    v.get(section)
        .and_then(|s| s.as_object())
        .is_some_and(|o| o.contains_key(key))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))?;
        if has_key(&raw, "train", "seed") {
            bail!("{}: set the seed at the top level, not in `train`", path.display());
        }
        if raw.get("gen").is_some_and(|g| has_key(g, "mix", "seed")) {
            bail!("{}: set the seed at the top level, not in `gen.mix`", path.display());
        }
        serde_json::from_value(raw).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Loads `path` if given, applies the seed override and propagates the
    /// seed to every section.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.gen.mix.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn mix_configs(&self) -> Vec<MixConfig> {
        (0..self.gen.records)
            .map(|i| MixConfig {
                seed: self.seed.wrapping_add(i as u64),
                ..self.gen.mix.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 3, "modle": {}}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
        fs::write(&p, r#"{"train": {"seed": 3}}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
        fs::write(&p, r#"{"seed": 3, "train": {"epochs": 2}}"#).unwrap();
        let c = RunConfig::resolve(Some(&p), None).unwrap();
        assert_eq!((c.seed, c.train.seed, c.train.epochs), (3, 3, 2));
        assert_eq!(RunConfig::resolve(Some(&p), Some(8)).unwrap().train.seed, 8);
    }

    #[test]
    fn echo_materializes_defaults() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        for key in ["seed", "model", "train", "gen", "preprocess", "paths"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(v["train"]["batch_size"], 32);
        assert_eq!(v["model"]["mstfe_kernels"], serde_json::json!([3, 5, 7]));
    }
}
