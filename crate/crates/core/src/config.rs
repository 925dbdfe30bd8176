//! The experiment configuration file.
//!
//! A single TOML document with one table per concern. Every field has a default,
//! so an empty file is a valid configuration; unknown keys are rejected. The
//! world seed in `[gen]` also seeds initialization, batching and rollouts.
//!
//! ```toml
//! [gen]
//! seed = 7
//!
//! [rl]
//! mode = "grpo-vanilla"
//! steps = 100
//!
//! [loss]
//! d = 0.6
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoding::DecodingConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::policy::PolicyDims;
use crate::train::{RlConfig, SftConfig};
use crate::world::GenConfig;

pub const WORKDIR_ENV: &str = "RISER_WORKDIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 64,
        }
    }
}

impl PolicyConfig {
    pub fn dims(&self, vocab: usize) -> PolicyDims {
        PolicyDims::new(vocab, self.embed, self.hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ranking cutoffs N for HR@N and NDCG@N.
    pub cutoffs: Vec<usize>,
    /// Evaluate only the first this-many test interactions (0 = all).
    pub max_test: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoffs: crate::metrics::DEFAULT_CUTOFFS.to_vec(),
            max_test: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Empty means: the `RISER_WORKDIR` environment variable, else `runs/default`.
    pub workdir: PathBuf,
    /// Relative to the workdir unless absolute.
    pub checkpoints: PathBuf,
    pub metrics: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::new(),
            checkpoints: "checkpoints".into(),
            metrics: "metrics".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub policy: PolicyConfig,
    pub sft: SftConfig,
    pub rl: RlConfig,
    pub loss: LossConfig,
    /// Evaluation beam search and standalone sampling.
    pub decode: DecodingConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.sft.validate()?;
        self.rl.validate()?;
        self.loss.validate()?;
        self.decode.validate()?;
        if self.policy.embed == 0 || self.policy.hidden == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return Err(Error::Config("eval cutoffs must be positive".into()));
        }
        if self.eval.cutoffs.iter().any(|&n| n > self.decode.beam_width) {
            return Err(Error::Config("eval cutoffs cannot exceed the beam width".into()));
        }
        Ok(())
    }

    /// The workdir after applying the environment fallback.
    pub fn workdir(&self) -> PathBuf {
        if !self.paths.workdir.as_os_str().is_empty() {
            return self.paths.workdir.clone();
        }
        match std::env::var_os(WORKDIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("runs/default"),
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.workdir().join(&self.paths.checkpoints)
    }

    pub fn metrics_dir(&self) -> PathBuf {
        self.workdir().join(&self.paths.metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn roundtrip_is_idempotent() {
        let cfg = ExperimentConfig::from_toml(
            "[gen]\nseed = 9\n[loss]\nd = 0.6\nw = 0.5\n[rl]\nmode = \"grpo-vanilla\"\n",
        )
        .unwrap();
        assert_eq!(cfg.gen.seed, 9);
        assert_eq!(cfg.rl.mode, crate::train::Mode::GrpoVanilla);
        let once = cfg.to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&once).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml().unwrap(), once);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("[gen]\nseeed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[nope]\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[rl]\nm = 4\nn = 8\n").is_err());
        assert!(ExperimentConfig::from_toml("[decode]\nlength_penalty = true\n").is_err());
        assert!(ExperimentConfig::from_toml("[eval]\ncutoffs = [50]\n").is_err());
    }
}
