//! Online training loop.
//!
//! Output directory layout:
//!
//! ```text
//! <output>/config.toml          resolved run config
//! <output>/metrics.csv          one row per episode
//! <output>/experience/          every transition, in replay insertion order
//! <output>/checkpoints/step-000010000/{agent.ckpt,registry.txt}
//! <output>/checkpoints/latest   name of the newest checkpoint directory
//! ```
//!
//! Replay serials are row numbers in `experience/index.tsv`, so a checkpoint
//! only records how many rows existed; resuming truncates the log and the
//! metrics back to that point and rebuilds the buffer from the tail.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{error, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::collect::shot_reward;
use super::evaluate::{greedy_action, observe};
use super::{frames_to_batch, load_registry, Policy, RunConfig, TrainError};
use crate::env::{Action, LevelPack, Physics, ScoreRegistry, WorldState, NUM_ACTIONS};
use crate::nn::{Checkpoint, OptimizerKind, OptimizerState, Tensor};
use crate::qnet::{loss_and_grads, sync_target, AgentSnapshot, Batch, QNetwork};
use crate::replay::dataset::{Dataset, DatasetRow, DatasetWriter, INDEX_FILE};
use crate::replay::{Experience, ReplayBuffer};
use crate::vision::{Frame, STATE_SHAPE};

pub const METRICS_HEADER: &str = "episode,env_step,grad_step,epsilon,level,shots,score,won,return,mean_loss,mean_q";

const AGENT_FILE: &str = "agent.ckpt";
const REGISTRY_FILE: &str = "registry.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: u64,
    /// Environment steps taken after this episode.
    pub env_step: u64,
    pub grad_step: u64,
    /// ε at the episode's first shot.
    pub epsilon: f64,
    pub level: String,
    pub shots: usize,
    pub score: u64,
    pub won: bool,
    /// Undiscounted sum of rewards.
    pub ret: f64,
    /// Averages over this episode's gradient steps, if any.
    pub mean_loss: Option<f64>,
    pub mean_q: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            self.episode,
            self.env_step,
            self.grad_step,
            self.epsilon,
            self.level,
            self.shots,
            self.score,
            self.won as u8,
            self.ret,
            opt(self.mean_loss),
            opt(self.mean_q)
        )
    }
}

/// Loads an agent from a checkpoint file, a checkpoint directory, or a run
/// directory (its latest checkpoint).
pub fn load_agent(path: &Path) -> Result<AgentSnapshot<f32>, TrainError> {
    let file = if path.is_file() {
        path.to_path_buf()
    } else if path.join(AGENT_FILE).is_file() {
        path.join(AGENT_FILE)
    } else {
        let latest = path.join("checkpoints").join("latest");
        let name = fs::read_to_string(&latest)
            .map_err(|e| TrainError::Io(format!("{}: {}", latest.display(), e)))?;
        path.join("checkpoints").join(name.trim()).join(AGENT_FILE)
    };
    Ok(AgentSnapshot::from_checkpoint(Checkpoint::load(&file)?)?)
}

pub struct Trainer {
    pub config: RunConfig,
    physics: Physics,
    pack: LevelPack,
    pub registry: ScoreRegistry,
    pub online: QNetwork<f32>,
    pub target: QNetwork<f32>,
    pub optimizer: OptimizerState<f32>,
    replay: ReplayBuffer<Arc<Frame>>,
    frames: HashMap<String, Arc<Frame>>,
    /// Normalized network input per interned frame, keyed by its address.
    /// Interned frames live as long as the trainer, so addresses are stable.
    inputs: HashMap<usize, Vec<f32>>,
    log: DatasetWriter,
    metrics: File,
    rng: ChaCha8Rng,
    pub env_step: u64,
    pub grad_step: u64,
    pub episode: u64,
    cursor: usize,
    next_checkpoint: u64,
}

impl Trainer {
    /// Fresh run into an output directory that holds no previous run.
    pub fn start(config: RunConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let out = &config.output;
        if out.join("metrics.csv").exists() {
            return Err(TrainError::Config(format!(
                "{} already holds a run; resume it or choose another output",
                out.display()
            )));
        }
        fs::create_dir_all(out.join("checkpoints"))?;
        fs::write(out.join("config.toml"), config.to_toml())?;
        let mut metrics = File::create(out.join("metrics.csv"))?;
        writeln!(metrics, "{}", METRICS_HEADER)?;

        let pack = LevelPack::load(&config.train_levels)?;
        let registry = load_registry(&config.registry, &pack)?;
        let online = QNetwork::build(&config.arch, config.seed);
        let optimizer = OptimizerState::new(OptimizerKind::adam(), &online.spec);
        let mut trainer = Trainer {
            physics: Physics::default(),
            pack,
            registry,
            target: online.clone(),
            online,
            optimizer,
            replay: ReplayBuffer::new(config.replay_capacity, NUM_ACTIONS)?,
            frames: HashMap::new(),
            inputs: HashMap::new(),
            log: DatasetWriter::open(&out.join("experience"))?,
            metrics,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            env_step: 0,
            grad_step: 0,
            episode: 0,
            cursor: 0,
            next_checkpoint: config.eval_every,
            config,
        };
        for dir in trainer.config.preload.clone() {
            trainer.preload(&dir)?;
        }
        Ok(trainer)
    }

    /// Continues the run in `config.output` from one of its checkpoints.
    pub fn resume(config: RunConfig, checkpoint_dir: &Path) -> Result<Self, TrainError> {
        config.validate()?;
        let ckpt = Checkpoint::load(&checkpoint_dir.join(AGENT_FILE))?;
        let snap = AgentSnapshot::from_checkpoint(ckpt)?;
        if snap.arch != config.arch {
            return Err(TrainError::Config("checkpoint architecture differs from the config".into()));
        }
        let meta = |key: &str| -> Result<u128, TrainError> {
            snap.meta
                .iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| TrainError::Config(format!("checkpoint lacks `{}`", key)))
        };
        let (env_step, grad_step, episode) = (meta("run.env_step")?, meta("run.grad_step")?, meta("run.episode")?);
        let (cursor, next_checkpoint) = (meta("run.cursor")?, meta("run.next_checkpoint")?);
        let (seed, word_pos, log_rows) = (meta("run.seed")?, meta("run.rng_word_pos")?, meta("run.log_rows")?);

        let out = config.output.clone();
        let log_dir = out.join("experience");
        truncate_lines(&log_dir.join(INDEX_FILE), 1 + log_rows as usize)?;
        truncate_lines(&out.join("metrics.csv"), 1 + episode as usize)?;
        let dataset = Dataset::open(&log_dir)?;
        let first = dataset.rows.len().saturating_sub(config.replay_capacity);

        let mut frames = HashMap::new();
        let mut items = Vec::with_capacity(dataset.rows.len() - first);
        for row in &dataset.rows[first..] {
            items.push(Experience {
                state: intern(&mut frames, &dataset, &row.state_file)?,
                action: row.action,
                reward: row.reward,
                next_state: intern(&mut frames, &dataset, &row.next_state_file)?,
                done: row.done,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        rng.set_word_pos(word_pos);
        let metrics = OpenOptions::new().append(true).open(out.join("metrics.csv"))?;
        let optimizer = snap
            .optimizer
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state".into()))?;
        info!("resumed at env step {} from {}", env_step, checkpoint_dir.display());
        Ok(Trainer {
            physics: Physics::default(),
            pack: LevelPack::load(&config.train_levels)?,
            registry: ScoreRegistry::load(&checkpoint_dir.join(REGISTRY_FILE))?,
            online: snap.online,
            target: snap.target,
            optimizer,
            replay: ReplayBuffer::restore(config.replay_capacity, NUM_ACTIONS, first as u64, items)?,
            frames,
            inputs: HashMap::new(),
            log: DatasetWriter::open(&log_dir)?,
            metrics,
            rng,
            env_step: env_step as u64,
            grad_step: grad_step as u64,
            episode: episode as u64,
            cursor: cursor as usize,
            next_checkpoint: next_checkpoint as u64,
            config,
        })
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    fn preload(&mut self, dir: &Path) -> Result<(), TrainError> {
        let ds = Dataset::open(dir)?;
        for row in &ds.rows {
            let state = ds.read_frame(&row.state_file)?;
            let next = ds.read_frame(&row.next_state_file)?;
            self.record(row.clone(), state, next)?;
        }
        info!("preloaded {} transitions from {}", ds.rows.len(), dir.display());
        Ok(())
    }

    /// Appends a transition to the log and the replay buffer.
    fn record(&mut self, row: DatasetRow, state: Frame, next: Frame) -> Result<(), TrainError> {
        let row = self.log.append(row, &state, &next)?;
        let state = self.frames.entry(row.state_file.clone()).or_insert_with(|| Arc::new(state)).clone();
        let next = self.frames.entry(row.next_state_file.clone()).or_insert_with(|| Arc::new(next)).clone();
        self.replay.push(Experience {
            state,
            action: row.action,
            reward: row.reward,
            next_state: next,
            done: row.done,
        })?;
        Ok(())
    }

    /// Runs until `total_steps`, checkpointing on the configured cadence and
    /// once at the end.
    pub fn run(&mut self) -> Result<(), TrainError> {
        while self.env_step < self.config.total_steps {
            let row = self.train_episode()?;
            if row.episode % 100 == 0 {
                info!(
                    "episode {} step {} eps {:.3} score {} won {} loss {:?}",
                    row.episode, row.env_step, row.epsilon, row.score, row.won, row.mean_loss
                );
            }
            if self.env_step >= self.next_checkpoint {
                while self.next_checkpoint <= self.env_step {
                    self.next_checkpoint += self.config.eval_every;
                }
                self.checkpoint()?;
            }
        }
        if !self.checkpoint_dir(self.env_step).exists() {
            self.checkpoint()?;
        }
        Ok(())
    }

    /// Plays one training episode with learning interleaved.
    pub fn train_episode(&mut self) -> Result<MetricsRow, TrainError> {
        let level = self.pack.levels[self.cursor % self.pack.len()].clone();
        self.cursor += 1;
        let pipeline = self.config.pipeline;
        let agent = self.config.agent;
        let mut state = WorldState::reset(&level)?;
        let mut frame = observe(&state, &pipeline)?;
        let first_eps = agent.epsilon.at(self.env_step);
        let (mut ret, mut shots) = (0.0, 0);
        let (mut losses, mut qs) = (Vec::new(), Vec::new());
        while !state.done {
            let eps = agent.epsilon.at(self.env_step);
            let action = if eps > 0.0 && self.rng.gen::<f64>() < eps {
                self.rng.gen_range(0..NUM_ACTIONS)
            } else {
                greedy_action(&self.online, &Arc::new(frame.clone()), &pipeline)?
            };
            let out = state.step(Action::new(action)?, &self.physics)?;
            let next = observe(&out.state, &pipeline)?;
            let reward = shot_reward(self.config.reward, out.score_delta, &level.id, &self.registry)?;
            let row = DatasetRow {
                state_file: String::new(),
                action,
                reward,
                next_state_file: String::new(),
                done: out.state.done,
                level: level.id.clone(),
                episode: self.episode,
                shot: shots as u32,
                score_delta: out.score_delta as i64,
                policy: Policy::EpsilonGreedy.name().into(),
            };
            self.record(row, frame, next.clone())?;
            self.env_step += 1;
            ret += reward;
            shots += 1;
            if self.replay.len() >= self.config.warmup && self.env_step % agent.update_rate == 0 {
                let (loss, q) = self.gradient_step()?;
                losses.push(loss);
                qs.push(q);
            }
            state = out.state;
            frame = next;
        }
        self.registry.observe(&level.id, state.score);
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let row = MetricsRow {
            episode: self.episode,
            env_step: self.env_step,
            grad_step: self.grad_step,
            epsilon: first_eps,
            level: level.id.clone(),
            shots,
            score: state.score,
            won: state.won,
            ret,
            mean_loss: mean(&losses),
            mean_q: mean(&qs),
        };
        self.metrics.write_all(row.to_csv().as_bytes())?;
        self.episode += 1;
        Ok(row)
    }

    /// One minibatch update. Returns the loss and the mean `Q(s, a)`.
    fn gradient_step(&mut self) -> Result<(f64, f64), TrainError> {
        let agent = self.config.agent;
        let sample = self.replay.sample_with_serials(agent.batch_size, &mut self.rng)?;
        let states: Vec<&Arc<Frame>> = sample.iter().map(|(_, e)| &e.state).collect();
        let nexts: Vec<&Arc<Frame>> = sample.iter().map(|(_, e)| &e.next_state).collect();
        let batch = Batch {
            states: self.input_batch(&states),
            actions: sample.iter().map(|(_, e)| e.action).collect(),
            rewards: sample.iter().map(|(_, e)| e.reward).collect(),
            next_states: self.input_batch(&nexts),
            dones: sample.iter().map(|(_, e)| e.done).collect(),
        };
        let out = loss_and_grads(&self.online, &self.target, &batch, &agent).map_err(|e| {
            let rows: Vec<u64> = sample.iter().map(|(s, _)| *s).collect();
            error!("{} at gradient step {}; experience rows {:?}", e, self.grad_step, rows);
            TrainError::Numeric(format!("{}; experience rows {:?}", e, rows))
        })?;
        self.optimizer
            .apply_update(&mut self.online.weights, &out.grads, agent.learning_rate)
            .map_err(|e| TrainError::Numeric(e.to_string()))?;
        self.grad_step += 1;
        sync_target(&self.online, &mut self.target, self.grad_step, agent.tau);
        let mean_q = out.taken_q.iter().sum::<f64>() / out.taken_q.len() as f64;
        Ok((out.loss, mean_q))
    }

    /// Same result as [`frames_to_batch`], normalizing each frame once.
    fn input_batch(&mut self, frames: &[&Arc<Frame>]) -> Tensor<f32> {
        let norm = self.config.pipeline.norm;
        let mut data = Vec::with_capacity(frames.len() * STATE_SHAPE.iter().product::<usize>());
        for f in frames {
            let input = self
                .inputs
                .entry(Arc::as_ptr(f) as usize)
                .or_insert_with(|| frames_to_batch(&[f], norm).data().to_vec());
            data.extend_from_slice(input);
        }
        let mut shape = vec![frames.len()];
        shape.extend_from_slice(&STATE_SHAPE);
        Tensor::from_vec(&shape, data).expect("frames are 84x84x3")
    }

    pub fn checkpoint_dir(&self, env_step: u64) -> PathBuf {
        self.config.output.join("checkpoints").join(format!("step-{:09}", env_step))
    }

    /// Writes the full run state for the current step. Only called between
    /// episodes.
    pub fn checkpoint(&mut self) -> Result<PathBuf, TrainError> {
        self.log.flush()?;
        self.metrics.flush()?;
        let dir = self.checkpoint_dir(self.env_step);
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let meta = [
            ("run.env_step", self.env_step as u128),
            ("run.grad_step", self.grad_step as u128),
            ("run.episode", self.episode as u128),
            ("run.cursor", self.cursor as u128),
            ("run.next_checkpoint", self.next_checkpoint as u128),
            ("run.seed", self.config.seed as u128),
            ("run.rng_word_pos", self.rng.get_word_pos()),
            ("run.log_rows", self.replay.inserted() as u128),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let snap = AgentSnapshot {
            step: self.env_step,
            arch: self.config.arch.clone(),
            config: self.config.agent,
            online: self.online.clone(),
            target: self.target.clone(),
            optimizer: Some(self.optimizer.clone()),
            meta,
        };
        snap.to_checkpoint().save(&tmp.join(AGENT_FILE))?;
        self.registry.save(&tmp.join(REGISTRY_FILE))?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&tmp, &dir)?;
        let latest = self.config.output.join("checkpoints").join("latest");
        let latest_tmp = latest.with_extension("tmp");
        fs::write(&latest_tmp, dir.file_name().unwrap().to_string_lossy().as_bytes())?;
        fs::rename(&latest_tmp, &latest)?;
        info!("checkpoint {}", dir.display());
        Ok(dir)
    }
}

fn intern(
    cache: &mut HashMap<String, Arc<Frame>>,
    ds: &Dataset,
    name: &str,
) -> Result<Arc<Frame>, TrainError> {
    if let Some(f) = cache.get(name) {
        return Ok(f.clone());
    }
    let f = Arc::new(ds.read_frame(name)?);
    cache.insert(name.to_string(), f.clone());
    Ok(f)
}

/// Keeps the first `keep` lines of a text file, rewriting it atomically.
fn truncate_lines(path: &Path, keep: usize) -> Result<(), TrainError> {
    let text = fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {}", path.display(), e)))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < keep {
        return Err(TrainError::Io(format!(
            "{} holds {} lines, checkpoint expects at least {}",
            path.display(),
            lines.len(),
            keep
        )));
    }
    let mut out = lines[..keep].join("\n");
    out.push('\n');
    let tmp = path.with_extension("truncate");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
