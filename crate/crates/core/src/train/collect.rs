use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{greedy_action, observe, run_episode};
use super::{load_registry, RunConfig, TrainError};
use crate::env::{
    reward_clipped, reward_normalized, Action, LevelPack, Physics, RewardMode, ScoreRegistry, WorldState,
    NUM_ACTIONS,
};
use crate::qnet::QNetwork;
use crate::replay::dataset::{frame_name, Dataset, DatasetRow, DatasetWriter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Random,
    EpsilonGreedy,
    Greedy,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::EpsilonGreedy => "epsilon-greedy",
            Policy::Greedy => "greedy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Policy::Random),
            "epsilon-greedy" => Some(Policy::EpsilonGreedy),
            "greedy" => Some(Policy::Greedy),
            _ => None,
        }
    }
}

pub(crate) fn shot_reward(
    mode: RewardMode,
    delta: u64,
    level: &str,
    registry: &ScoreRegistry,
) -> Result<f64, TrainError> {
    Ok(match mode {
        RewardMode::Clipped => reward_clipped(delta),
        RewardMode::Normalized => reward_normalized(delta, level, registry)?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollectSummary {
    pub episodes: usize,
    pub rows: usize,
    pub wins: usize,
}

/// Plays `episodes` episodes over the training levels in order and appends
/// every transition to the dataset at `out`. `net` is required for the
/// greedy policies; `epsilon` applies to [`Policy::EpsilonGreedy`].
pub fn collect(
    config: &RunConfig,
    policy: Policy,
    episodes: usize,
    out: &Path,
    net: Option<&QNetwork<f32>>,
    epsilon: f64,
) -> Result<CollectSummary, TrainError> {
    let pack = LevelPack::load(&config.train_levels)?;
    let mut registry = load_registry(&config.registry, &pack)?;
    if policy != Policy::Random && net.is_none() {
        return Err(TrainError::Config(format!("policy {} needs a checkpoint", policy.name())));
    }
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut writer = DatasetWriter::open(out)?;
    let mut summary = CollectSummary {
        episodes: 0,
        rows: 0,
        wins: 0,
    };
    for ep in 0..episodes {
        let level = &pack.levels[ep % pack.len()];
        let (record, steps) = run_episode(level, policy, &physics, &config.pipeline, |frame| {
            let explore = match policy {
                Policy::Random => true,
                Policy::EpsilonGreedy => epsilon > 0.0 && rng.gen::<f64>() < epsilon,
                Policy::Greedy => false,
            };
            if explore {
                Ok(rng.gen_range(0..NUM_ACTIONS))
            } else {
                greedy_action(net.unwrap(), frame, &config.pipeline)
            }
        })?;
        for (shot, s) in steps.iter().enumerate() {
            let row = DatasetRow {
                state_file: String::new(),
                action: s.action,
                reward: shot_reward(config.reward, s.score_delta, &level.id, &registry)?,
                next_state_file: String::new(),
                done: s.done,
                level: level.id.clone(),
                episode: ep as u64,
                shot: shot as u32,
                score_delta: s.score_delta as i64,
                policy: policy.name().into(),
            };
            writer.append(row, &s.state, &s.next_state)?;
            summary.rows += 1;
        }
        registry.observe(&level.id, record.total);
        summary.episodes += 1;
        summary.wins += record.won as usize;
    }
    writer.flush()?;
    Ok(summary)
}

/// Replays every recorded episode through the environment and checks each
/// action's score delta, done flag and both frames. Returns the number of
/// rows verified.
pub fn verify_dataset(dataset: &Dataset, pack: &LevelPack, config: &RunConfig) -> Result<usize, TrainError> {
    let physics = Physics::default();
    let mut state: Option<WorldState> = None;
    for (i, row) in dataset.rows.iter().enumerate() {
        let fail = |m: String| TrainError::Other(format!("dataset row {}: {}", i, m));
        if row.shot == 0 {
            let level = pack
                .get(&row.level)
                .ok_or_else(|| fail(format!("unknown level `{}`", row.level)))?;
            state = Some(WorldState::reset(level)?);
        }
        let current = state
            .take()
            .ok_or_else(|| fail("episode does not start at shot 0".into()))?;
        if frame_name(&observe(&current, &config.pipeline)?) != row.state_file {
            return Err(fail("state frame differs from the replayed state".into()));
        }
        let out = current.step(Action::new(row.action)?, &physics)?;
        if out.score_delta as i64 != row.score_delta {
            return Err(fail(format!(
                "recorded score_delta {} but replay gives {}",
                row.score_delta, out.score_delta
            )));
        }
        if out.state.done != row.done {
            return Err(fail("done flag differs".into()));
        }
        if frame_name(&observe(&out.state, &config.pipeline)?) != row.next_state_file {
            return Err(fail("next-state frame differs".into()));
        }
        if !out.state.done {
            state = Some(out.state);
        }
    }
    Ok(dataset.rows.len())
}
