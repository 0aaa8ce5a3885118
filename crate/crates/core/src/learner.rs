//! Independent tabular Q-learning.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::ObservationKey;
use crate::policy::argmax;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("row length {got} does not match action count {expected}")]
    RowLength { expected: usize, got: usize },
    #[error("non-finite Q-value {0}")]
    NonFiniteValue(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Step size, in (0, 1].
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    /// Environment steps over which epsilon anneals linearly.
    pub epsilon_anneal_steps: u64,
    /// Initial value of unseen Q-rows.
    #[serde(default)]
    pub q_init: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_final: 0.05,
            epsilon_anneal_steps: 50_000,
            q_init: 0.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!(
                "learner.alpha must be in (0,1], got {}",
                self.alpha
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!(
                "learner.gamma must be in [0,1], got {}",
                self.gamma
            ));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_final", self.epsilon_final),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("learner.{name} must be in [0,1], got {v}"));
            }
        }
        if self.epsilon_final > self.epsilon_start {
            return Err("learner.epsilon_final must not exceed learner.epsilon_start".into());
        }
        if self.epsilon_anneal_steps == 0 {
            return Err("learner.epsilon_anneal_steps must be positive".into());
        }
        if !self.q_init.is_finite() {
            return Err("learner.q_init must be finite".into());
        }
        Ok(())
    }
}

/// Q-values per observation; unseen observations read as a constant row.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_actions: usize,
    default_row: Vec<f64>,
    rows: HashMap<ObservationKey, Vec<f64>>,
}

impl QTable {
    pub fn new(n_actions: usize, q_init: f64) -> Self {
        Self {
            n_actions,
            default_row: vec![q_init; n_actions],
            rows: HashMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q_init(&self) -> f64 {
        self.default_row[0]
    }

    pub fn row(&self, obs: &ObservationKey) -> &[f64] {
        self.rows.get(obs).unwrap_or(&self.default_row)
    }

    pub fn max_q(&self, obs: &ObservationKey) -> f64 {
        self.row(obs)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stored rows sorted by key, for stable serialization.
    pub fn sorted_rows(&self) -> Vec<(&ObservationKey, &[f64])> {
        let mut rows: Vec<_> = self.rows.iter().map(|(k, v)| (k, v.as_slice())).collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows
    }

    pub fn insert_row(&mut self, obs: ObservationKey, row: Vec<f64>) -> Result<(), LearnerError> {
        if row.len() != self.n_actions {
            return Err(LearnerError::RowLength {
                expected: self.n_actions,
                got: row.len(),
            });
        }
        if let Some(&bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(LearnerError::NonFiniteValue(bad));
        }
        self.rows.insert(obs, row);
        Ok(())
    }

    fn row_mut(&mut self, obs: &ObservationKey) -> &mut Vec<f64> {
        if !self.rows.contains_key(obs) {
            self.rows.insert(obs.clone(), self.default_row.clone());
        }
        self.rows.get_mut(obs).expect("row inserted above")
    }
}

/// One-step Q-learning: `Q <- Q + alpha * (y - Q)`, with
/// `y = r + gamma * max Q(next)` or `y = r` on terminal transitions.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    table: &mut QTable,
    obs: &ObservationKey,
    action: usize,
    reward: f64,
    next_obs: &ObservationKey,
    terminal: bool,
    cfg: &LearnerConfig,
) -> Result<(), LearnerError> {
    if !reward.is_finite() {
        return Err(LearnerError::NonFiniteReward(reward));
    }
    if action >= table.n_actions {
        return Err(LearnerError::ActionOutOfRange {
            action,
            n_actions: table.n_actions,
        });
    }
    let target = if terminal {
        reward
    } else {
        reward + cfg.gamma * table.max_q(next_obs)
    };
    let row = table.row_mut(obs);
    row[action] += cfg.alpha * (target - row[action]);
    Ok(())
}

/// Linear anneal from `epsilon_start` to `epsilon_final`, flat afterwards.
pub fn epsilon_schedule(env_step: u64, cfg: &LearnerConfig) -> f64 {
    if env_step >= cfg.epsilon_anneal_steps {
        return cfg.epsilon_final;
    }
    let frac = env_step as f64 / cfg.epsilon_anneal_steps as f64;
    cfg.epsilon_start + (cfg.epsilon_final - cfg.epsilon_start) * frac
}

pub fn epsilon_greedy<R: Rng + ?Sized>(
    table: &QTable,
    obs: &ObservationKey,
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..table.n_actions)
    } else {
        greedy(table, obs)
    }
}

pub fn greedy(table: &QTable, obs: &ObservationKey) -> usize {
    argmax(table.row(obs))
}
