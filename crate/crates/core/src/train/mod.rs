//! Orchestration: data collection, the training loop, one-try evaluation,
//! action statistics and the tabular harness.

mod collect;
mod config;
mod evaluate;
mod tabular;
mod trainer;

pub use collect::{collect, verify_dataset, CollectSummary, Policy};
pub use config::RunConfig;
pub use evaluate::{
    action_histogram, checkpoint_action_matrix, evaluate, play_episode, EvalRow, EvalTable, EpisodeRecord,
    ShotRecord,
};
pub use tabular::{q_star, run_tabular, TabularConfig, TabularMdp, TabularReport};
pub use trainer::{load_agent, MetricsRow, Trainer, METRICS_HEADER};

use std::sync::Arc;

use thiserror::Error;

use crate::env::{EnvError, LevelPack, ScoreRegistry};
use crate::nn::{CheckpointError, Tensor};
use crate::qnet::QError;
use crate::replay::dataset::DatasetError;
use crate::replay::ReplayError;
use crate::vision::{normalize, Frame, NormMode, VisionError, STATE_SHAPE};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl TrainError {
    /// Process exit status for this failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Config(_) => 2,
            TrainError::Io(_) => 3,
            TrainError::Numeric(_) => 4,
            TrainError::Other(_) => 1,
        }
    }
}

impl From<EnvError> for TrainError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Io(_) => TrainError::Io(e.to_string()),
            EnvError::Parse { .. } | EnvError::InvalidLevel { .. } | EnvError::MissingMaximum(_) => {
                TrainError::Config(e.to_string())
            }
            _ => TrainError::Other(e.to_string()),
        }
    }
}

impl From<QError> for TrainError {
    fn from(e: QError) -> Self {
        match e {
            QError::NonFiniteLoss { .. } => TrainError::Numeric(e.to_string()),
            QError::InvalidConfig(_) => TrainError::Config(e.to_string()),
            QError::Nn(crate::nn::NnError::NonFiniteGradient { .. }) => TrainError::Numeric(e.to_string()),
            _ => TrainError::Other(e.to_string()),
        }
    }
}

impl From<DatasetError> for TrainError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Parse { .. } => TrainError::Config(e.to_string()),
            _ => TrainError::Io(e.to_string()),
        }
    }
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Io(e.to_string())
    }
}

impl From<VisionError> for TrainError {
    fn from(e: VisionError) -> Self {
        TrainError::Other(e.to_string())
    }
}

impl From<ReplayError> for TrainError {
    fn from(e: ReplayError) -> Self {
        TrainError::Other(e.to_string())
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

/// Stacks stored 84×84 frames into a normalized `[n, 84, 84, 3]` batch.
pub fn frames_to_batch(frames: &[&Arc<Frame>], mode: NormMode) -> Tensor<f32> {
    let per = STATE_SHAPE.iter().product::<usize>();
    let mut data = Vec::with_capacity(frames.len() * per);
    for f in frames {
        data.extend_from_slice(normalize(f, mode).tensor.data());
    }
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(&STATE_SHAPE);
    Tensor::from_vec(&shape, data).expect("frames are 84x84x3")
}

/// Registry seeded from a file, checked to cover every level of the pack.
pub fn load_registry(path: &std::path::Path, pack: &LevelPack) -> Result<ScoreRegistry, TrainError> {
    let reg = ScoreRegistry::load(path)?;
    for l in &pack.levels {
        if reg.max(&l.id).unwrap_or(0) == 0 {
            return Err(TrainError::Config(format!(
                "registry {} has no positive maximum for level `{}`",
                path.display(),
                l.id
            )));
        }
    }
    Ok(reg)
}
