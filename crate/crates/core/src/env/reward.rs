use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    Clipped,
    #[default]
    Normalized,
}

/// `1` above 3000 points, `-1` otherwise.
pub fn reward_clipped(score_delta: u64) -> f64 {
    if score_delta > 3000 {
        1.0
    } else {
        -1.0
    }
}

/// Shot score as a fraction of the best episode total known for the level.
/// The registry is not touched; call [`ScoreRegistry::observe`] with the
/// episode total when the episode ends.
pub fn reward_normalized(score_delta: u64, level_id: &str, registry: &ScoreRegistry) -> Result<f64, EnvError> {
    match registry.max(level_id) {
        Some(m) if m > 0 => Ok(score_delta as f64 / m as f64),
        _ => Err(EnvError::MissingMaximum(level_id.to_string())),
    }
}

/// Best known episode score per level. Entries only ever grow.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScoreRegistry {
    best: BTreeMap<String, u64>,
}

impl ScoreRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn max(&self, level_id: &str) -> Option<u64> {
        self.best.get(level_id).copied()
    }

    /// Records an episode total; returns whether the maximum increased.
    pub fn observe(&mut self, level_id: &str, total: u64) -> bool {
        let entry = self.best.entry(level_id.to_string()).or_insert(0);
        if total > *entry {
            *entry = total;
            true
        } else {
            false
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.best.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// One `level_id max` pair per line.
    pub fn to_text(&self) -> String {
        self.best.iter().map(|(k, v)| format!("{} {}\n", k, v)).collect()
    }

    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut reg = ScoreRegistry::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(id), Some(v), None) = (it.next(), it.next(), it.next()) else {
                return Err(EnvError::Parse {
                    line: i + 1,
                    reason: "expected `level_id max_score`".into(),
                });
            };
            let v = v.parse().map_err(|_| EnvError::Parse {
                line: i + 1,
                reason: format!("bad score `{}`", v),
            })?;
            reg.observe(id, v);
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
