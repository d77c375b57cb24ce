use super::{batch_targets, AgentConfig, LossOutput, QError, QFunction};
use crate::replay::Experience;

/// Explicit action-value table standing in for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    num_actions: usize,
    /// Row-major `[state][action]`.
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        QTable {
            num_actions: rows.first().map_or(0, Vec::len),
            values: rows.concat(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    /// Max-norm distance to another table of the same shape.
    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Same loss as the network version, differentiated with respect to the
    /// table entries. Gradients share the table layout.
    pub fn loss_and_grads(
        &self,
        target: &QTable,
        batch: &[Experience<usize>],
        config: &AgentConfig,
    ) -> Result<LossOutput<Vec<f64>>, QError> {
        let n = batch.len();
        if n == 0 {
            return Err(QError::EmptyBatch);
        }
        let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();
        let next: Vec<usize> = batch.iter().map(|e| e.next_state).collect();
        let dones: Vec<bool> = batch.iter().map(|e| e.done).collect();
        let targets = batch_targets(self, target, &rewards, &next[..], &dones, config)?;
        let mut grads = vec![0.0; self.values.len()];
        let mut loss = 0.0;
        let mut taken_q = Vec::with_capacity(n);
        for (e, y) in batch.iter().zip(&targets) {
            let q = self.get(e.state, e.action);
            let r = y - q;
            loss += r * r;
            taken_q.push(q);
            grads[e.state * self.num_actions + e.action] += -2.0 * r / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            let rows = (0..n).filter(|&i| !(targets[i] - taken_q[i]).is_finite()).collect();
            return Err(QError::NonFiniteLoss { loss, rows });
        }
        Ok(LossOutput {
            loss,
            grads,
            targets,
            taken_q,
        })
    }

    pub fn apply_sgd(&mut self, grads: &[f64], learning_rate: f64) {
        for (v, g) in self.values.iter_mut().zip(grads) {
            *v -= learning_rate * g;
        }
    }
}

impl QFunction for QTable {
    type States = [usize];

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn q_rows(&self, states: &[usize]) -> Result<Vec<Vec<f64>>, QError> {
        Ok(states.iter().map(|&s| self.row(s).to_vec()).collect())
    }
}
