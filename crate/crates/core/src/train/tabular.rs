//! Tabular harness: the same replay, target-network and loss machinery with
//! the network replaced by an explicit table on a small deterministic MDP,
//! so convergence can be checked against value iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::qnet::{select_action, sync_target, AgentConfig, EpsilonSchedule, QTable};
use crate::replay::{Experience, ReplayBuffer};

/// Deterministic finite MDP; episodes restart from state 0 after a terminal
/// transition.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Indexed `s * num_actions + a`.
    pub next: Vec<usize>,
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    /// Five states, three actions, one terminal transition.
    pub fn embedded() -> Self {
        TabularMdp {
            num_states: 5,
            num_actions: 3,
            next: vec![0, 1, 2, 0, 2, 3, 1, 3, 4, 2, 4, 0, 3, 0, 4],
            reward: vec![0.0, 1.0, 0.0, 0.5, 0.0, 2.0, 1.0, -1.0, 0.0, 0.0, 3.0, -0.5, 2.0, 0.0, 5.0],
            terminal: vec![
                false, false, false, false, false, false, false, false, false, false, false, false, false, false,
                true,
            ],
        }
    }

    pub fn step(&self, state: usize, action: usize) -> (f64, usize, bool) {
        let i = state * self.num_actions + action;
        (self.reward[i], self.next[i], self.terminal[i])
    }
}

/// Optimal action values by value iteration.
pub fn q_star(mdp: &TabularMdp, gamma: f64) -> QTable {
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    for _ in 0..100_000 {
        let mut next = q.clone();
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                let (r, s2, done) = mdp.step(s, a);
                let bootstrap = if done {
                    0.0
                } else {
                    q.row(s2).iter().copied().fold(f64::NEG_INFINITY, f64::max)
                };
                next.values[s * mdp.num_actions + a] = r + gamma * bootstrap;
            }
        }
        let delta = next.max_abs_diff(&q);
        q = next;
        if delta < 1e-13 {
            break;
        }
    }
    q
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularConfig {
    pub agent: AgentConfig,
    pub max_updates: u64,
    pub tolerance: f64,
    pub replay_capacity: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        TabularConfig {
            agent: AgentConfig {
                gamma: 0.9,
                tau: 100,
                learning_rate: 1.0,
                batch_size: 32,
                update_rate: 1,
                double_q: true,
                epsilon: EpsilonSchedule {
                    start: 1.0,
                    end: 1.0,
                    decay_steps: 0,
                },
            },
            max_updates: 50_000,
            tolerance: 1e-3,
            replay_capacity: 1_000,
            warmup: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularReport {
    pub q: QTable,
    pub q_star: QTable,
    pub updates: u64,
    /// First update after which the table was within tolerance of `Q*`.
    pub converged_at: Option<u64>,
    pub max_error: f64,
}

/// Trains until the table is within tolerance of `Q*` or the update budget
/// runs out.
pub fn run_tabular(mdp: &TabularMdp, config: &TabularConfig) -> Result<TabularReport, TrainError> {
    let agent = &config.agent;
    agent.validate()?;
    let reference = q_star(mdp, agent.gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut replay = ReplayBuffer::new(config.replay_capacity, mdp.num_actions)?;
    let mut online = QTable::zeros(mdp.num_states, mdp.num_actions);
    let mut target = online.clone();
    let (mut state, mut env_step, mut updates) = (0usize, 0u64, 0u64);
    let mut converged_at = None;
    while updates < config.max_updates && converged_at.is_none() {
        let eps = agent.epsilon.at(env_step);
        let action = select_action(&online, &[state][..], eps, &mut rng)?;
        let (reward, next_state, done) = mdp.step(state, action);
        replay.push(Experience {
            state,
            action,
            reward,
            next_state,
            done,
        })?;
        state = if done { 0 } else { next_state };
        env_step += 1;
        if replay.len() >= config.warmup && env_step % agent.update_rate == 0 {
            let batch = replay.sample(agent.batch_size, &mut rng)?;
            let out = online.loss_and_grads(&target, &batch, agent)?;
            online.apply_sgd(&out.grads, agent.learning_rate);
            updates += 1;
            sync_target(&online, &mut target, updates, agent.tau);
            if online.max_abs_diff(&reference) < config.tolerance {
                converged_at = Some(updates);
            }
        }
    }
    Ok(TabularReport {
        max_error: online.max_abs_diff(&reference),
        q: online,
        q_star: reference,
        updates,
        converged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_discount_learns_immediate_rewards() {
        let mdp = TabularMdp::embedded();
        let mut cfg = TabularConfig::default();
        cfg.agent.gamma = 0.0;
        let report = run_tabular(&mdp, &cfg).unwrap();
        assert!(report.converged_at.is_some());
        for (q, r) in report.q.values.iter().zip(&mdp.reward) {
            assert!((q - r).abs() < 1e-3);
        }
    }
}
