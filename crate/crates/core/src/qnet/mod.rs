//! Dueling double-Q agent: network assembly, bootstrap targets, the squared
//! TD loss with its gradient, ε-greedy selection and target synchronisation.

mod table;

pub use table::QTable;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    forward, shape_flow, Checkpoint, LayerSpec, NetworkWeights, NnError, OptimizerState, Scalar, Tensor,
};
use crate::vision::STATE_SHAPE;

#[derive(Debug, Error)]
pub enum QError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite loss {loss} (batch rows {rows:?})")]
    NonFiniteLoss { loss: f64, rows: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// How the last two convolutions are laid out. The kernel list 8, 4, 3, 7
/// with strides 4, 2, 2 leaves a 4×4 map after the third convolution, too
/// small for a 7×7 kernel; each layout resolves that differently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrunkLayout {
    /// Third convolution at stride 1: 84 → 20 → 9 → 7 → 1.
    #[default]
    StrideAdjusted,
    /// Strides kept, last convolution padded by 2: 84 → 20 → 9 → 4 → 2.
    Padded,
}

impl TrunkLayout {
    pub fn name(self) -> &'static str {
        match self {
            TrunkLayout::StrideAdjusted => "stride-adjusted",
            TrunkLayout::Padded => "padded",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "stride-adjusted" => Some(TrunkLayout::StrideAdjusted),
            "padded" => Some(TrunkLayout::Padded),
            _ => None,
        }
    }
}

/// Network shape: four convolutions, flatten, dueling head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Output channels of the four convolutions.
    pub widths: [usize; 4],
    pub layout: TrunkLayout,
    pub num_actions: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            widths: [32, 64, 64, 512],
            layout: TrunkLayout::StrideAdjusted,
            num_actions: crate::env::NUM_ACTIONS,
        }
    }
}

impl Architecture {
    pub fn with_widths(widths: [usize; 4]) -> Self {
        Architecture {
            widths,
            ..Default::default()
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let [w1, w2, w3, w4] = self.widths;
        let (stride3, pad4) = match self.layout {
            TrunkLayout::StrideAdjusted => (1, 0),
            TrunkLayout::Padded => (2, 2),
        };
        let mut layers = vec![
            LayerSpec::conv(8, 4, STATE_SHAPE[2], w1),
            LayerSpec::Relu,
            LayerSpec::conv(4, 2, w1, w2),
            LayerSpec::Relu,
            LayerSpec::conv(3, stride3, w2, w3),
            LayerSpec::Relu,
            LayerSpec::Conv {
                kernel: (7, 7),
                stride: (1, 1),
                padding: (pad4, pad4),
                in_channels: w3,
                out_channels: w4,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
        ];
        let flat = shape_flow(&layers, &STATE_SHAPE)
            .expect("trunk fits an 84x84 input")
            .last()
            .unwrap()[0];
        layers.push(LayerSpec::DuelingSplit {
            in_dim: flat,
            num_actions: self.num_actions,
        });
        layers
    }

    /// Spatial sizes through the trunk, e.g. `84x84x3 > 20x20x32 > ... > 91`.
    pub fn dimension_flow(&self) -> String {
        shape_flow(&self.layers(), &STATE_SHAPE)
            .unwrap()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i == 0 || *i % 2 == 1 || *i >= 9)
            .map(|(_, s)| s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"))
            .collect::<Vec<_>>()
            .join(">")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    /// Linear anneal from `start` to `end`, constant afterwards.
    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Target sync interval in gradient steps.
    pub tau: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Environment steps per gradient step.
    pub update_rate: u64,
    pub double_q: bool,
    pub epsilon: EpsilonSchedule,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            tau: 1000,
            learning_rate: 1e-5,
            batch_size: 32,
            update_rate: 4,
            double_q: true,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), QError> {
        let bad = |m: &str| Err(QError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.tau == 0 {
            return bad("tau must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.update_rate == 0 {
            return bad("update_rate must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        Ok(())
    }

    /// Header entries for a checkpoint.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        [
            ("agent.gamma", self.gamma.to_string()),
            ("agent.tau", self.tau.to_string()),
            ("agent.learning_rate", self.learning_rate.to_string()),
            ("agent.batch_size", self.batch_size.to_string()),
            ("agent.update_rate", self.update_rate.to_string()),
            ("agent.double_q", self.double_q.to_string()),
            ("agent.epsilon_start", self.epsilon.start.to_string()),
            ("agent.epsilon_end", self.epsilon.end.to_string()),
            ("agent.epsilon_decay_steps", self.epsilon.decay_steps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_meta<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Self, QError> {
        fn get<V: std::str::FromStr, T: Scalar>(c: &Checkpoint<T>, key: &str) -> Result<V, QError> {
            c.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| QError::Checkpoint(format!("missing or invalid `{}`", key)))
        }
        let cfg = AgentConfig {
            gamma: get(ckpt, "agent.gamma")?,
            tau: get(ckpt, "agent.tau")?,
            learning_rate: get(ckpt, "agent.learning_rate")?,
            batch_size: get(ckpt, "agent.batch_size")?,
            update_rate: get(ckpt, "agent.update_rate")?,
            double_q: get(ckpt, "agent.double_q")?,
            epsilon: EpsilonSchedule {
                start: get(ckpt, "agent.epsilon_start")?,
                end: get(ckpt, "agent.epsilon_end")?,
                decay_steps: get(ckpt, "agent.epsilon_decay_steps")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Anything that maps a batch of states to one row of action values each.
pub trait QFunction {
    type States: ?Sized;

    fn num_actions(&self) -> usize;

    fn q_rows(&self, states: &Self::States) -> Result<Vec<Vec<f64>>, QError>;
}

/// Sequential network ending in a dueling head.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork<T> {
    pub spec: Vec<LayerSpec>,
    pub weights: NetworkWeights<T>,
}

/// Q-values with the two streams they were merged from, all `[n, ·]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QOutput<T> {
    pub q: Tensor<T>,
    pub value: Tensor<T>,
    pub advantage: Tensor<T>,
}

impl<T: Scalar> QNetwork<T> {
    /// Glorot-initialised network; identical seeds give identical weights.
    pub fn build(arch: &Architecture, seed: u64) -> Self {
        Self::from_spec(arch.layers(), seed).expect("architecture ends in a dueling head")
    }

    /// Any sequential spec whose last layer is a dueling head.
    pub fn from_spec(spec: Vec<LayerSpec>, seed: u64) -> Result<Self, QError> {
        let weights = NetworkWeights::glorot(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
        Self::new(spec, weights)
    }

    pub fn new(spec: Vec<LayerSpec>, weights: NetworkWeights<T>) -> Result<Self, QError> {
        if !matches!(spec.last(), Some(LayerSpec::DuelingSplit { .. })) {
            return Err(QError::InvalidConfig("network must end in a dueling head".into()));
        }
        weights.validate(&spec)?;
        Ok(QNetwork { spec, weights })
    }

    pub fn num_actions(&self) -> usize {
        match self.spec.last() {
            Some(LayerSpec::DuelingSplit { num_actions, .. }) => *num_actions,
            _ => unreachable!(),
        }
    }

    /// Trunk parameters: every layer before the head.
    pub fn trunk(&self) -> &[Vec<Tensor<T>>] {
        &self.weights.layers[..self.spec.len() - 1]
    }

    /// Value-stream weight `[in, 1]` and bias `[1]`.
    pub fn value_stream(&self) -> (&Tensor<T>, &Tensor<T>) {
        let head = self.weights.layers.last().unwrap();
        (&head[0], &head[1])
    }

    /// Advantage-stream weight `[in, actions]` and bias `[actions]`.
    pub fn advantage_stream(&self) -> (&Tensor<T>, &Tensor<T>) {
        let head = self.weights.layers.last().unwrap();
        (&head[2], &head[3])
    }

    /// Accepts a single state or a batch; a single state gains a batch axis
    /// of one.
    pub fn evaluate(&self, states: &Tensor<T>) -> Result<QOutput<T>, QError> {
        let input_rank = match self.spec.first() {
            Some(LayerSpec::Conv { .. }) => 3,
            _ => 1,
        };
        let batched;
        let input = if states.shape().len() == input_rank {
            let mut shape = vec![1];
            shape.extend_from_slice(states.shape());
            batched = states.clone().reshape(&shape)?;
            &batched
        } else {
            states
        };
        let (q, cache) = forward(&self.spec, &self.weights, input)?;
        Ok(QOutput {
            q,
            value: cache.value_stream().unwrap().clone(),
            advantage: cache.advantage_stream().unwrap().clone(),
        })
    }

    pub fn q_values(&self, states: &Tensor<T>) -> Result<Tensor<T>, QError> {
        Ok(self.evaluate(states)?.q)
    }
}

impl<T: Scalar> QFunction for QNetwork<T> {
    type States = Tensor<T>;

    fn num_actions(&self) -> usize {
        QNetwork::num_actions(self)
    }

    fn q_rows(&self, states: &Tensor<T>) -> Result<Vec<Vec<f64>>, QError> {
        let q = self.q_values(states)?;
        let a = self.num_actions();
        Ok(q.data().chunks(a).map(|r| r.iter().map(|v| Scalar::to_f64(*v)).collect()).collect())
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `r` when terminal, else `r + γ max_a Q_target(s', a)`.
pub fn dqn_target_from(reward: f64, target_q: &[f64], done: bool, gamma: f64) -> f64 {
    if done {
        return reward;
    }
    reward + gamma * target_q[argmax(target_q)]
}

/// `r` when terminal, else `r + γ Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_dqn_target_from(reward: f64, online_q: &[f64], target_q: &[f64], done: bool, gamma: f64) -> f64 {
    if done {
        return reward;
    }
    reward + gamma * target_q[argmax(online_q)]
}

/// Single-state network form of [`dqn_target_from`].
pub fn dqn_target<Q: QFunction>(
    target: &Q,
    reward: f64,
    next_state: &Q::States,
    done: bool,
    gamma: f64,
) -> Result<f64, QError> {
    if done {
        return Ok(reward);
    }
    Ok(dqn_target_from(reward, &target.q_rows(next_state)?[0], false, gamma))
}

/// Single-state network form of [`double_dqn_target_from`].
pub fn double_dqn_target<Q: QFunction>(
    online: &Q,
    target: &Q,
    reward: f64,
    next_state: &Q::States,
    done: bool,
    gamma: f64,
) -> Result<f64, QError> {
    if done {
        return Ok(reward);
    }
    let on = &online.q_rows(next_state)?[0];
    let tg = &target.q_rows(next_state)?[0];
    Ok(double_dqn_target_from(reward, on, tg, false, gamma))
}

/// Bootstrap targets for a batch; next-state values are only computed when
/// some transition is non-terminal.
pub fn batch_targets<Q: QFunction>(
    online: &Q,
    target: &Q,
    rewards: &[f64],
    next_states: &Q::States,
    dones: &[bool],
    config: &AgentConfig,
) -> Result<Vec<f64>, QError> {
    if dones.iter().all(|&d| d) || config.gamma == 0.0 {
        return Ok(rewards.to_vec());
    }
    let tq = target.q_rows(next_states)?;
    let oq = if config.double_q {
        online.q_rows(next_states)?
    } else {
        Vec::new()
    };
    Ok((0..rewards.len())
        .map(|i| {
            if config.double_q {
                double_dqn_target_from(rewards[i], &oq[i], &tq[i], dones[i], config.gamma)
            } else {
                dqn_target_from(rewards[i], &tq[i], dones[i], config.gamma)
            }
        })
        .collect())
}

/// Minibatch in network layout.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[B, ...]`
    pub states: Tensor<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Tensor<T>,
    pub dones: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct LossOutput<G> {
    pub loss: f64,
    pub grads: G,
    pub targets: Vec<f64>,
    /// `Q_online(s_i, a_i)` before the update.
    pub taken_q: Vec<f64>,
}

/// Mean squared TD error over the batch and its gradient. Targets are
/// constants; only `Q(s_i, a_i)` receives an output gradient.
pub fn loss_and_grads<T: Scalar>(
    online: &QNetwork<T>,
    target: &QNetwork<T>,
    batch: &Batch<T>,
    config: &AgentConfig,
) -> Result<LossOutput<NetworkWeights<T>>, QError> {
    let n = batch.actions.len();
    if n == 0 {
        return Err(QError::EmptyBatch);
    }
    let targets = batch_targets(online, target, &batch.rewards, &batch.next_states, &batch.dones, config)?;
    let (q, cache) = forward(&online.spec, &online.weights, &batch.states)?;
    let a = online.num_actions();
    let mut dout = Tensor::zeros(q.shape());
    let mut loss = 0.0;
    let mut taken_q = Vec::with_capacity(n);
    for i in 0..n {
        let qi = Scalar::to_f64(q.data()[i * a + batch.actions[i]]);
        let residual = targets[i] - qi;
        loss += residual * residual;
        taken_q.push(qi);
        dout.data_mut()[i * a + batch.actions[i]] = T::from_f64(-2.0 * residual / n as f64);
    }
    loss /= n as f64;
    if !loss.is_finite() {
        let rows = (0..n)
            .filter(|&i| !(targets[i] - taken_q[i]).is_finite())
            .collect();
        return Err(QError::NonFiniteLoss { loss, rows });
    }
    let grads = crate::nn::backward_params(&online.spec, &online.weights, &cache, &dout)?;
    Ok(LossOutput {
        loss,
        grads,
        targets,
        taken_q,
    })
}

/// ε-greedy choice. The uniform draw happens only when `epsilon > 0`, so
/// greedy play consumes no randomness.
pub fn select_action<Q: QFunction, R: Rng>(
    net: &Q,
    state: &Q::States,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, QError> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..net.num_actions()));
    }
    Ok(argmax(&net.q_rows(state)?[0]))
}

/// Copies the online weights into the target when `step` is a multiple of
/// `tau`. Returns whether a copy happened.
pub fn sync_target<W: Clone>(online: &W, target: &mut W, step: u64, tau: u64) -> bool {
    if tau > 0 && step % tau == 0 {
        *target = online.clone();
        true
    } else {
        false
    }
}

/// Online and target networks with their optimizer, as stored on disk.
pub struct AgentSnapshot<T> {
    pub step: u64,
    pub arch: Architecture,
    pub config: AgentConfig,
    pub online: QNetwork<T>,
    pub target: QNetwork<T>,
    pub optimizer: Option<OptimizerState<T>>,
    /// Extra header entries, kept in order.
    pub meta: Vec<(String, String)>,
}

impl<T: Scalar> AgentSnapshot<T> {
    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut meta = vec![
            ("arch.widths".to_string(), self.arch.widths.map(|w| w.to_string()).join(",")),
            ("arch.layout".to_string(), self.arch.layout.name().to_string()),
            ("arch.actions".to_string(), self.arch.num_actions.to_string()),
            ("arch.flow".to_string(), self.arch.dimension_flow()),
        ];
        meta.extend(self.config.to_meta());
        meta.extend(self.meta.iter().cloned());
        Checkpoint {
            step: self.step,
            meta,
            spec: self.online.spec.clone(),
            weights: vec![
                ("online".into(), self.online.weights.clone()),
                ("target".into(), self.target.weights.clone()),
            ],
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self, QError> {
        let bad = |m: &str| QError::Checkpoint(m.to_string());
        let widths: Vec<usize> = ckpt
            .meta("arch.widths")
            .ok_or_else(|| bad("missing arch.widths"))?
            .split(',')
            .map(|w| w.parse().map_err(|_| bad("bad arch.widths")))
            .collect::<Result<_, _>>()?;
        let arch = Architecture {
            widths: widths.try_into().map_err(|_| bad("arch.widths needs four entries"))?,
            layout: ckpt
                .meta("arch.layout")
                .and_then(TrunkLayout::from_name)
                .ok_or_else(|| bad("missing or unknown arch.layout"))?,
            num_actions: ckpt
                .meta("arch.actions")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("missing arch.actions"))?,
        };
        if arch.layers() != ckpt.spec {
            return Err(bad("layer list disagrees with the architecture header"));
        }
        let config = AgentConfig::from_meta(&ckpt)?;
        let online = ckpt.weight_set("online").ok_or_else(|| bad("no online weights"))?.clone();
        let target = ckpt.weight_set("target").ok_or_else(|| bad("no target weights"))?.clone();
        let meta = ckpt
            .meta
            .iter()
            .filter(|(k, _)| !k.starts_with("arch.") && !k.starts_with("agent."))
            .cloned()
            .collect();
        Ok(AgentSnapshot {
            step: ckpt.step,
            online: QNetwork::new(ckpt.spec.clone(), online)?,
            target: QNetwork::new(ckpt.spec, target)?,
            arch,
            config,
            optimizer: ckpt.optimizer,
            meta,
        })
    }
}
