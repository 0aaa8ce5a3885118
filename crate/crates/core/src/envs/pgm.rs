//! Patient gold miner.
//!
//! Agents earn a small reward per stone from stone piles, or a large reward
//! from a gold mine after standing on it for `mining_duration` consecutive
//! steps, each of which costs `mining_penalty`. Rewards are individual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    check_actions, check_positions, check_view, encode_observation, resolve_moves, EnvError,
    EnvEvent, Environment, Grid, ObservationKey, Pos, StepResult, AGENT_BIT,
};

/// `[up, down, right, left, stay]`
pub const N_ACTIONS: usize = 5;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const LEFT: usize = 3;
pub const STAY: usize = 4;

const TAG: u8 = 1;
const GOLD: u8 = 0x01;
const STONE: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmConfig {
    pub height: usize,
    pub width: usize,
    /// View window as `[rows, cols]`, centred on the agent.
    pub view: [usize; 2],
    pub episode_length: usize,
    /// Consecutive steps on a mine needed for one piece of gold.
    pub mining_duration: usize,
    pub gold_reward: f64,
    pub mining_penalty: f64,
    pub stone_reward: f64,
    /// Stones each agent may take from each pile.
    pub stone_quota: usize,
    pub step_cost: f64,
    pub agents: Vec<Pos>,
    pub gold_mines: Vec<Pos>,
    pub stone_piles: Vec<Pos>,
}

impl PgmConfig {
    /// 12x12 grid, 6 agents, 2 mines, 3 piles.
    pub fn pgm6() -> Self {
        Self {
            height: 12,
            width: 12,
            view: [5, 5],
            episode_length: 50,
            mining_duration: 10,
            gold_reward: 30.0,
            mining_penalty: -1.0,
            stone_reward: 0.3,
            stone_quota: 10,
            step_cost: -0.2,
            agents: vec![
                Pos(3, 0),
                Pos(4, 0),
                Pos(5, 0),
                Pos(6, 0),
                Pos(7, 0),
                Pos(8, 0),
            ],
            gold_mines: vec![Pos(2, 9), Pos(9, 9)],
            stone_piles: vec![Pos(2, 3), Pos(6, 3), Pos(9, 3)],
        }
    }

    /// 8x9 grid, 3 agents, 1 mine, 2 piles.
    pub fn pgm3() -> Self {
        Self {
            height: 8,
            width: 9,
            view: [3, 5],
            episode_length: 25,
            mining_duration: 8,
            gold_reward: 20.0,
            mining_penalty: -1.0,
            stone_reward: 0.3,
            stone_quota: 8,
            step_cost: -0.2,
            agents: vec![Pos(3, 0), Pos(4, 0), Pos(5, 0)],
            gold_mines: vec![Pos(4, 6)],
            stone_piles: vec![Pos(1, 2), Pos(6, 2)],
        }
    }

    pub fn grid(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.agents.is_empty() {
            return Err(EnvError::Config("pgm needs at least one agent".into()));
        }
        check_view(self.view)?;
        check_positions(
            self.grid(),
            &[
                ("agent", &self.agents),
                ("gold mine", &self.gold_mines),
                ("stone pile", &self.stone_piles),
            ],
        )?;
        if self.episode_length == 0 || self.mining_duration == 0 || self.stone_quota == 0 {
            return Err(EnvError::Config(
                "episode_length, mining_duration and stone_quota must be positive".into(),
            ));
        }
        for (name, v) in [
            ("gold_reward", self.gold_reward),
            ("mining_penalty", self.mining_penalty),
            ("stone_reward", self.stone_reward),
            ("step_cost", self.step_cost),
        ] {
            if !v.is_finite() {
                return Err(EnvError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PgmEnv {
    cfg: PgmConfig,
    positions: Vec<Pos>,
    /// Consecutive mining steps, `[agent][mine]`.
    mining: Vec<Vec<usize>>,
    /// Whether the agent already took its gold, `[agent][mine]`.
    gold_taken: Vec<Vec<bool>>,
    /// Stones taken, `[agent][pile]`.
    stones: Vec<Vec<usize>>,
    time: usize,
    done: bool,
}

impl PgmEnv {
    pub fn new(cfg: PgmConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let n = cfg.agents.len();
        let mut env = Self {
            positions: cfg.agents.clone(),
            mining: vec![vec![0; cfg.gold_mines.len()]; n],
            gold_taken: vec![vec![false; cfg.gold_mines.len()]; n],
            stones: vec![vec![0; cfg.stone_piles.len()]; n],
            time: 0,
            done: false,
            cfg,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &PgmConfig {
        &self.cfg
    }

    pub fn positions(&self) -> &[Pos] {
        &self.positions
    }

    pub fn stones_taken(&self, agent: usize, pile: usize) -> usize {
        self.stones[agent][pile]
    }

    pub fn gold_taken(&self, agent: usize, mine: usize) -> bool {
        self.gold_taken[agent][mine]
    }

    fn observe(&self, agent: usize) -> ObservationKey {
        let own = self.positions[agent];
        encode_observation(
            TAG,
            self.cfg.grid(),
            own,
            self.cfg.view,
            Some(self.time),
            |p| {
                let mut code = 0;
                if self.cfg.gold_mines.contains(&p) {
                    code |= GOLD;
                }
                if self.cfg.stone_piles.contains(&p) {
                    code |= STONE;
                }
                if p != own && self.positions.contains(&p) {
                    code |= AGENT_BIT;
                }
                code
            },
        )
    }

    fn info(&self) -> BTreeMap<String, f64> {
        let gold: usize = self.gold_taken.iter().flatten().filter(|&&g| g).count();
        let stones: usize = self.stones.iter().flatten().sum();
        BTreeMap::from([
            ("agents".to_string(), self.positions.len() as f64),
            ("gold_mines".to_string(), self.cfg.gold_mines.len() as f64),
            ("stone_piles".to_string(), self.cfg.stone_piles.len() as f64),
            ("gold_collected".to_string(), gold as f64),
            ("stones_collected".to_string(), stones as f64),
            ("time".to_string(), self.time as f64),
        ])
    }

    fn result(&self, rewards: Vec<f64>, events: Vec<EnvEvent>) -> StepResult {
        StepResult {
            observations: (0..self.positions.len()).map(|i| self.observe(i)).collect(),
            team_reward: rewards.iter().sum(),
            rewards,
            done: self.done,
            info: self.info(),
            events,
        }
    }
}

impl Environment for PgmEnv {
    fn n_agents(&self) -> usize {
        self.cfg.agents.len()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn episode_length(&self) -> usize {
        self.cfg.episode_length
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        // Dynamics are deterministic; the seed is accepted for interface parity.
        self.positions = self.cfg.agents.clone();
        for row in &mut self.mining {
            row.fill(0);
        }
        for row in &mut self.gold_taken {
            row.fill(false);
        }
        for row in &mut self.stones {
            row.fill(0);
        }
        self.time = 0;
        self.done = false;
        self.result(vec![0.0; self.positions.len()], Vec::new())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        check_actions(actions, self.positions.len(), N_ACTIONS)?;
        let mut events = Vec::new();
        let deltas: Vec<(isize, isize)> = actions
            .iter()
            .map(|&a| match a {
                UP => (-1, 0),
                DOWN => (1, 0),
                RIGHT => (0, 1),
                LEFT => (0, -1),
                _ => (0, 0),
            })
            .collect();
        resolve_moves(self.cfg.grid(), &mut self.positions, &deltas, &mut events);

        let mut rewards = vec![self.cfg.step_cost; self.positions.len()];
        for (agent, reward) in rewards.iter_mut().enumerate() {
            let pos = self.positions[agent];
            for (pile, &p) in self.cfg.stone_piles.iter().enumerate() {
                if p == pos && self.stones[agent][pile] < self.cfg.stone_quota {
                    self.stones[agent][pile] += 1;
                    *reward += self.cfg.stone_reward;
                    events.push(EnvEvent::CollectStone {
                        agent,
                        pile,
                        count: self.stones[agent][pile],
                    });
                }
            }
            for (mine, &m) in self.cfg.gold_mines.iter().enumerate() {
                if m != pos {
                    self.mining[agent][mine] = 0;
                    continue;
                }
                if self.gold_taken[agent][mine] {
                    continue;
                }
                self.mining[agent][mine] += 1;
                let consecutive = self.mining[agent][mine];
                *reward += self.cfg.mining_penalty;
                if consecutive >= self.cfg.mining_duration {
                    *reward += self.cfg.gold_reward;
                    self.gold_taken[agent][mine] = true;
                    events.push(EnvEvent::CollectGold {
                        agent,
                        mine,
                        consecutive,
                    });
                } else {
                    events.push(EnvEvent::MineStep {
                        agent,
                        mine,
                        consecutive,
                    });
                }
            }
        }

        self.time += 1;
        self.done = self.time >= self.cfg.episode_length;
        Ok(self.result(rewards, events))
    }
}
