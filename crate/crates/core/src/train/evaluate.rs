use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use super::{frames_to_batch, Policy, TrainError};
use crate::env::{render, Action, Level, LevelPack, Physics, WorldState, NUM_ACTIONS};
use crate::qnet::{argmax, QFunction, QNetwork};
use crate::replay::dataset::Dataset;
use crate::vision::{downsample, Frame, PipelineConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub action: usize,
    pub score_delta: u64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub level: String,
    pub shots: Vec<ShotRecord>,
    /// Sum of the shot deltas, terminal bonus included.
    pub total: u64,
    pub won: bool,
    pub policy: Policy,
}

/// One observed transition with its stored (84×84) frames.
pub(crate) struct Step {
    pub state: Arc<Frame>,
    pub next_state: Arc<Frame>,
    pub action: usize,
    pub score_delta: u64,
    pub done: bool,
}

pub(crate) fn observe(state: &WorldState, pipeline: &PipelineConfig) -> Result<Frame, TrainError> {
    Ok(downsample(&render(state), pipeline)?)
}

/// Plays one episode with `choose` picking the angle from the stored frame.
/// Rewards are left at zero; callers fill them in.
pub(crate) fn run_episode(
    level: &Level,
    policy: Policy,
    physics: &Physics,
    pipeline: &PipelineConfig,
    mut choose: impl FnMut(&Arc<Frame>) -> Result<usize, TrainError>,
) -> Result<(EpisodeRecord, Vec<Step>), TrainError> {
    let mut state = WorldState::reset(level)?;
    let mut frame = Arc::new(observe(&state, pipeline)?);
    let mut steps = Vec::new();
    let mut shots = Vec::new();
    while !state.done {
        let action = choose(&frame)?;
        let out = state.step(Action::new(action)?, physics)?;
        let next = Arc::new(observe(&out.state, pipeline)?);
        shots.push(ShotRecord {
            action,
            score_delta: out.score_delta,
            reward: 0.0,
        });
        steps.push(Step {
            state: frame,
            next_state: next.clone(),
            action,
            score_delta: out.score_delta,
            done: out.state.done,
        });
        state = out.state;
        frame = next;
    }
    let record = EpisodeRecord {
        level: level.id.clone(),
        shots,
        total: state.score,
        won: state.won,
        policy,
    };
    Ok((record, steps))
}

pub(crate) fn greedy_action(net: &QNetwork<f32>, frame: &Arc<Frame>, pipeline: &PipelineConfig) -> Result<usize, TrainError> {
    let x = frames_to_batch(&[frame], pipeline.norm);
    Ok(argmax(&net.q_rows(&x)?[0]))
}

/// One greedy episode on `level`.
pub fn play_episode(
    net: &QNetwork<f32>,
    level: &Level,
    physics: &Physics,
    pipeline: &PipelineConfig,
) -> Result<EpisodeRecord, TrainError> {
    Ok(run_episode(level, Policy::Greedy, physics, pipeline, |f| greedy_action(net, f, pipeline))?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub level: String,
    pub raw_score: u64,
    pub won: bool,
    /// Raw score when won, zero otherwise.
    pub protocol_score: u64,
    pub shots: usize,
    pub first_action: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn wins(&self) -> usize {
        self.rows.iter().filter(|r| r.won).count()
    }

    pub fn protocol_total(&self) -> u64 {
        self.rows.iter().map(|r| r.protocol_score).sum()
    }

    pub fn raw_total(&self) -> u64 {
        self.rows.iter().map(|r| r.raw_score).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,won,protocol_score,raw_score,shots,first_action\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.level, r.won as u8, r.protocol_score, r.raw_score, r.shots, r.first_action
            );
        }
        let _ = writeln!(out, "total,{},{},{},,", self.wins(), self.protocol_total(), self.raw_total());
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.level.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<width$}  {:>3}  {:>9}  {:>9}  {:>5}  {:>5}\n",
            "level", "won", "score", "raw", "shots", "angle"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>3}  {:>9}  {:>9}  {:>5}  {:>5}",
                r.level,
                if r.won { "yes" } else { "no" },
                r.protocol_score,
                r.raw_score,
                r.shots,
                r.first_action
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:>9}  {:>9}",
            "total",
            self.wins(),
            self.protocol_total(),
            self.raw_total()
        );
        out
    }
}

/// One greedy try per level; failures score zero.
pub fn evaluate(
    net: &QNetwork<f32>,
    pack: &LevelPack,
    physics: &Physics,
    pipeline: &PipelineConfig,
) -> Result<EvalTable, TrainError> {
    if net.num_actions() != NUM_ACTIONS {
        return Err(TrainError::Config(format!(
            "network has {} actions, levels need {}",
            net.num_actions(),
            NUM_ACTIONS
        )));
    }
    let rows = pack
        .levels
        .par_iter()
        .map(|level| {
            let ep = play_episode(net, level, physics, pipeline)?;
            Ok(EvalRow {
                level: ep.level,
                raw_score: ep.total,
                won: ep.won,
                protocol_score: if ep.won { ep.total } else { 0 },
                shots: ep.shots.len(),
                first_action: ep.shots[0].action,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(EvalTable { rows })
}

/// Shot count per angle over a dataset.
pub fn action_histogram(dataset: &Dataset) -> Result<Vec<u64>, TrainError> {
    if dataset.rows.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    let mut bins = vec![0u64; NUM_ACTIONS];
    for r in &dataset.rows {
        bins[r.action] += 1;
    }
    Ok(bins)
}

/// Greedy first-shot angle per level for each network, returned as
/// per-network histograms over angles (one row per evaluation epoch).
pub fn checkpoint_action_matrix(
    nets: &[&QNetwork<f32>],
    pack: &LevelPack,
    pipeline: &PipelineConfig,
) -> Result<Vec<Vec<u64>>, TrainError> {
    nets.iter()
        .map(|net| {
            let mut bins = vec![0u64; NUM_ACTIONS];
            for level in &pack.levels {
                let frame = Arc::new(observe(&WorldState::reset(level)?, pipeline)?);
                bins[greedy_action(net, &frame, pipeline)?] += 1;
            }
            Ok(bins)
        })
        .collect()
}
