//! Find the treasure.
//!
//! Boxes open only when at least `min_openers` agents within one cell of the
//! box perform `open` in the same step. An opened box's item is collected by
//! any adjacent agent performing `pick up`. All rewards are team rewards.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_actions, check_positions, check_view, encode_observation, resolve_moves, EnvError,
    EnvEvent, Environment, Grid, ObservationKey, Pos, StepResult, AGENT_BIT,
};

/// `[up, down, right, left, open, pick up, stay]`
pub const N_ACTIONS: usize = 7;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const LEFT: usize = 3;
pub const OPEN: usize = 4;
pub const PICK_UP: usize = 5;
pub const STAY: usize = 6;

const TAG: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxColor {
    Red,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Item {
    Treasure,
    Coin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxState {
    Closed,
    Open,
    Emptied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtConfig {
    pub height: usize,
    pub width: usize,
    pub view: [usize; 2],
    pub episode_length: usize,
    pub agents: Vec<Pos>,
    pub red_boxes: Vec<Pos>,
    pub yellow_boxes: Vec<Pos>,
    /// Index into `red_boxes` of the box holding the treasure; drawn
    /// uniformly at every reset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treasure_box: Option<usize>,
    pub min_openers: usize,
    pub open_red_cost: f64,
    pub open_yellow_cost: f64,
    pub coin_reward: f64,
    pub treasure_reward: f64,
    pub step_cost: f64,
}

impl Default for FtConfig {
    fn default() -> Self {
        Self {
            height: 10,
            width: 10,
            view: [5, 5],
            episode_length: 50,
            agents: vec![Pos(4, 4), Pos(4, 5), Pos(5, 4), Pos(5, 5)],
            red_boxes: vec![
                Pos(0, 0),
                Pos(0, 9),
                Pos(9, 0),
                Pos(9, 9),
                Pos(0, 5),
                Pos(9, 4),
            ],
            yellow_boxes: vec![Pos(4, 1), Pos(5, 8), Pos(2, 6)],
            treasure_box: None,
            min_openers: 2,
            open_red_cost: -2.0,
            open_yellow_cost: -1.0,
            coin_reward: 2.0,
            treasure_reward: 15.0,
            step_cost: -0.04,
        }
    }
}

impl FtConfig {
    pub fn grid(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.agents.is_empty() {
            return Err(EnvError::Config("ft needs at least one agent".into()));
        }
        check_view(self.view)?;
        check_positions(
            self.grid(),
            &[
                ("agent", &self.agents),
                ("red box", &self.red_boxes),
                ("yellow box", &self.yellow_boxes),
            ],
        )?;
        if self.red_boxes.is_empty() {
            return Err(EnvError::Config("ft needs at least one red box".into()));
        }
        if let Some(t) = self.treasure_box {
            if t >= self.red_boxes.len() {
                return Err(EnvError::Config(format!(
                    "treasure_box {t} out of range for {} red boxes",
                    self.red_boxes.len()
                )));
            }
        }
        if self.episode_length == 0 || self.min_openers == 0 {
            return Err(EnvError::Config(
                "episode_length and min_openers must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FtEnv {
    cfg: FtConfig,
    positions: Vec<Pos>,
    /// Red boxes first, then yellow.
    boxes: Vec<(Pos, BoxColor, Option<Item>, BoxState)>,
    time: usize,
    done: bool,
    treasure_collected: usize,
}

impl FtEnv {
    pub fn new(cfg: FtConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut env = Self {
            positions: Vec::new(),
            boxes: Vec::new(),
            time: 0,
            done: false,
            treasure_collected: 0,
            cfg,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn positions(&self) -> &[Pos] {
        &self.positions
    }

    pub fn box_state(&self, index: usize) -> BoxState {
        self.boxes[index].3
    }

    /// Index of the red box holding the treasure this episode.
    pub fn treasure_index(&self) -> Option<usize> {
        self.boxes.iter().position(|b| b.2 == Some(Item::Treasure))
    }

    fn cell_code(&self, p: Pos, own: Pos) -> u8 {
        let mut code = 0u8;
        if let Some(b) = self.boxes.iter().find(|b| b.0 == p) {
            code = match (b.1, b.3, b.2) {
                (BoxColor::Red, BoxState::Closed, _) => 1,
                (BoxColor::Red, BoxState::Open, Some(_)) => 2,
                (BoxColor::Red, _, _) => 3,
                (BoxColor::Yellow, BoxState::Closed, _) => 4,
                (BoxColor::Yellow, BoxState::Open, Some(_)) => 5,
                (BoxColor::Yellow, _, _) => 6,
            };
        }
        if p != own && self.positions.contains(&p) {
            code |= AGENT_BIT;
        }
        code
    }

    fn observe(&self, agent: usize) -> ObservationKey {
        let own = self.positions[agent];
        encode_observation(
            TAG,
            self.cfg.grid(),
            own,
            self.cfg.view,
            Some(self.time),
            |p| self.cell_code(p, own),
        )
    }

    fn info(&self) -> BTreeMap<String, f64> {
        let count = |pred: &dyn Fn(&(Pos, BoxColor, Option<Item>, BoxState)) -> bool| {
            self.boxes.iter().filter(|b| pred(b)).count() as f64
        };
        BTreeMap::from([
            ("red_boxes".into(), count(&|b| b.1 == BoxColor::Red)),
            ("yellow_boxes".into(), count(&|b| b.1 == BoxColor::Yellow)),
            (
                "treasure_boxes".into(),
                count(&|b| b.2 == Some(Item::Treasure)),
            ),
            ("opened_boxes".into(), count(&|b| b.3 != BoxState::Closed)),
            ("treasure_collected".into(), self.treasure_collected as f64),
            ("time".into(), self.time as f64),
        ])
    }

    fn result(&self, team: f64, events: Vec<EnvEvent>) -> StepResult {
        StepResult {
            observations: (0..self.positions.len()).map(|i| self.observe(i)).collect(),
            rewards: vec![team; self.positions.len()],
            team_reward: team,
            done: self.done,
            info: self.info(),
            events,
        }
    }
}

impl Environment for FtEnv {
    fn n_agents(&self) -> usize {
        self.cfg.agents.len()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn episode_length(&self) -> usize {
        self.cfg.episode_length
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let treasure = self
            .cfg
            .treasure_box
            .unwrap_or_else(|| rng.gen_range(0..self.cfg.red_boxes.len()));
        self.positions = self.cfg.agents.clone();
        self.boxes = self
            .cfg
            .red_boxes
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let item = (i == treasure).then_some(Item::Treasure);
                (p, BoxColor::Red, item, BoxState::Closed)
            })
            .chain(
                self.cfg
                    .yellow_boxes
                    .iter()
                    .map(|&p| (p, BoxColor::Yellow, Some(Item::Coin), BoxState::Closed)),
            )
            .collect();
        self.time = 0;
        self.done = false;
        self.treasure_collected = 0;
        self.result(0.0, Vec::new())
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

        let mut team = self.cfg.step_cost;
        let near = |agent_pos: Pos, box_pos: Pos| agent_pos.manhattan(box_pos) <= 1;

        for (index, b) in self.boxes.iter_mut().enumerate() {
            if b.3 != BoxState::Closed {
                continue;
            }
            let openers: Vec<usize> = (0..actions.len())
                .filter(|&i| actions[i] == OPEN && near(self.positions[i], b.0))
                .collect();
            if openers.len() >= self.cfg.min_openers {
                b.3 = BoxState::Open;
                team += match b.1 {
                    BoxColor::Red => self.cfg.open_red_cost,
                    BoxColor::Yellow => self.cfg.open_yellow_cost,
                };
                events.push(EnvEvent::OpenBox {
                    index,
                    color: b.1,
                    openers,
                });
            }
        }

        for (index, b) in self.boxes.iter_mut().enumerate() {
            if b.3 != BoxState::Open {
                continue;
            }
            let pickers: Vec<usize> = (0..actions.len())
                .filter(|&i| actions[i] == PICK_UP && near(self.positions[i], b.0))
                .collect();
            if pickers.is_empty() {
                continue;
            }
            b.3 = BoxState::Emptied;
            if let Some(item) = b.2.take() {
                match item {
                    Item::Treasure => {
                        team += self.cfg.treasure_reward;
                        self.treasure_collected += 1;
                    }
                    Item::Coin => team += self.cfg.coin_reward,
                }
                events.push(EnvEvent::CollectItem {
                    index,
                    item,
                    agents: pickers,
                });
            }
        }

        self.time += 1;
        self.done = self.time >= self.cfg.episode_length || self.treasure_collected > 0;
        Ok(self.result(team, events))
    }
}
