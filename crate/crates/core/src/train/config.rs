use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::env::RewardMode;
use crate::qnet::{AgentConfig, Architecture};
use crate::vision::PipelineConfig;

/// Everything a run depends on. Relative paths in a config file are taken
/// relative to the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub train_levels: PathBuf,
    pub validation_levels: PathBuf,
    /// Best-known episode totals per level.
    pub registry: PathBuf,
    pub output: PathBuf,
    pub reward: RewardMode,
    pub replay_capacity: usize,
    /// Transitions required before the first gradient step.
    pub warmup: usize,
    /// Environment steps; the run ends at the first episode boundary after.
    pub total_steps: u64,
    /// Environment steps between checkpoints.
    pub eval_every: u64,
    /// Datasets loaded into replay before training.
    pub preload: Vec<PathBuf>,
    pub agent: AgentConfig,
    pub arch: Architecture,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            train_levels: "levels/train".into(),
            validation_levels: "levels/validation".into(),
            registry: "levels/registry.txt".into(),
            output: "runs/default".into(),
            reward: RewardMode::Normalized,
            replay_capacity: crate::replay::DEFAULT_CAPACITY,
            warmup: 1000,
            total_steps: 100_000,
            eval_every: 10_000,
            preload: Vec::new(),
            agent: AgentConfig::default(),
            arch: Architecture::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, TrainError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.train_levels,
            &mut self.validation_levels,
            &mut self.registry,
            &mut self.output,
        ]
        .into_iter()
        .chain(self.preload.iter_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.agent.validate()?;
        let bad = |m: String| Err(TrainError::Config(m));
        for (what, p) in [
            ("train_levels", &self.train_levels),
            ("validation_levels", &self.validation_levels),
            ("registry", &self.registry),
        ] {
            if !p.exists() {
                return bad(format!("{} path {} does not exist", what, p.display()));
            }
        }
        for p in &self.preload {
            if !p.is_dir() {
                return bad(format!("preload dataset {} does not exist", p.display()));
            }
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be positive".into());
        }
        if self.warmup == 0 || self.warmup > self.replay_capacity {
            return bad("warmup must lie in [1, replay_capacity]".into());
        }
        if self.warmup < self.agent.batch_size {
            return bad("warmup must be at least batch_size".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.arch.widths.contains(&0) {
            return bad("network widths must be positive".into());
        }
        Ok(())
    }
}
