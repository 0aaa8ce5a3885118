//! Cleanup: a public-goods game.
//!
//! Waste accumulates in the river and suppresses apple growth in the
//! orchard. Agents clean the three river cells straight above them or
//! collect apples for a team reward. Agents always face up; there is no
//! rotation and no tagging beam.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_actions, check_positions, check_view, encode_observation, resolve_moves, EnvError,
    EnvEvent, Environment, Grid, ObservationKey, Pos, StepResult, AGENT_BIT,
};

/// `[up, down, left, right, clean, stay]`
pub const N_ACTIONS: usize = 6;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const CLEAN: usize = 4;
pub const STAY: usize = 5;

const TAG: u8 = 3;
const GROUND: u8 = 0;
const RIVER: u8 = 1;
const WASTE: u8 = 2;
const ORCHARD: u8 = 3;
const APPLE: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanupConfig {
    pub height: usize,
    pub width: usize,
    pub view: [usize; 2],
    pub episode_length: usize,
    pub agents: Vec<Pos>,
    /// The river occupies this many rows at the top of the grid.
    pub river_rows: usize,
    /// The orchard occupies this many rows at the bottom of the grid.
    pub orchard_rows: usize,
    /// Waste cells placed uniformly in the river at reset.
    pub initial_waste: usize,
    pub waste_spawn_prob: f64,
    /// Spawning stops once waste would exceed this share of river cells.
    pub waste_cap: f64,
    /// Per-cell apple growth probability at zero waste.
    pub apple_growth_max: f64,
    pub apple_reward: f64,
    /// Reach of the cleaning beam, in cells above the agent.
    pub clean_length: usize,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            view: [5, 5],
            episode_length: 50,
            agents: vec![Pos(4, 1), Pos(4, 3), Pos(4, 5), Pos(4, 7)],
            river_rows: 2,
            orchard_rows: 2,
            initial_waste: 0,
            waste_spawn_prob: 0.5,
            waste_cap: 0.4,
            apple_growth_max: 0.3,
            apple_reward: 4.0,
            clean_length: 3,
        }
    }
}

impl CleanupConfig {
    pub fn grid(&self) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
        }
    }

    pub fn river_cells(&self) -> usize {
        self.river_rows * self.width
    }

    /// Largest waste count allowed without exceeding the cap.
    pub fn waste_limit(&self) -> usize {
        // small epsilon so that e.g. 0.4 * 10 is not floored to 3
        ((self.waste_cap * self.river_cells() as f64) + 1e-9).floor() as usize
    }

    fn is_river(&self, p: Pos) -> bool {
        p.0 < self.river_rows
    }

    fn is_orchard(&self, p: Pos) -> bool {
        p.0 >= self.height - self.orchard_rows
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.agents.is_empty() {
            return Err(EnvError::Config("cleanup needs at least one agent".into()));
        }
        check_view(self.view)?;
        check_positions(self.grid(), &[("agent", &self.agents)])?;
        if self.river_rows == 0 || self.orchard_rows == 0 {
            return Err(EnvError::Config(
                "river_rows and orchard_rows must be positive".into(),
            ));
        }
        if self.river_rows + self.orchard_rows > self.height {
            return Err(EnvError::Config("river and orchard overlap".into()));
        }
        for (name, p) in [
            ("waste_spawn_prob", self.waste_spawn_prob),
            ("waste_cap", self.waste_cap),
            ("apple_growth_max", self.apple_growth_max),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EnvError::Config(format!("{name} must be in [0,1]")));
            }
        }
        if self.waste_cap == 0.0 {
            return Err(EnvError::Config("waste_cap must be positive".into()));
        }
        if self.initial_waste > self.waste_limit() {
            return Err(EnvError::Config(format!(
                "initial_waste {} exceeds the waste cap of {} cells",
                self.initial_waste,
                self.waste_limit()
            )));
        }
        if self.episode_length == 0 || self.clean_length == 0 {
            return Err(EnvError::Config(
                "episode_length and clean_length must be positive".into(),
            ));
        }
        if !self.apple_reward.is_finite() {
            return Err(EnvError::Config("apple_reward must be finite".into()));
        }
        Ok(())
    }
}

/// Per-cell apple growth probability: linear decay from `max_prob` at zero
/// waste to zero when the waste fraction reaches `cap`.
pub fn apple_growth_probability(waste_fraction: f64, max_prob: f64, cap: f64) -> f64 {
    max_prob * (1.0 - waste_fraction / cap).max(0.0)
}

#[derive(Debug, Clone)]
pub struct CleanupEnv {
    cfg: CleanupConfig,
    positions: Vec<Pos>,
    waste: Vec<bool>,
    apples: Vec<bool>,
    rng: ChaCha8Rng,
    time: usize,
    done: bool,
}

impl CleanupEnv {
    pub fn new(cfg: CleanupConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let cells = cfg.height * cfg.width;
        let mut env = Self {
            positions: Vec::new(),
            waste: vec![false; cells],
            apples: vec![false; cells],
            rng: ChaCha8Rng::seed_from_u64(0),
            time: 0,
            done: false,
            cfg,
        };
        env.reset(0);
        Ok(env)
    }

    fn idx(&self, p: Pos) -> usize {
        p.0 * self.cfg.width + p.1
    }

    pub fn waste_count(&self) -> usize {
        self.waste.iter().filter(|&&w| w).count()
    }

    pub fn waste_fraction(&self) -> f64 {
        self.waste_count() as f64 / self.cfg.river_cells() as f64
    }

    pub fn has_waste(&self, p: Pos) -> bool {
        self.waste[self.idx(p)]
    }

    pub fn has_apple(&self, p: Pos) -> bool {
        self.apples[self.idx(p)]
    }

    pub fn positions(&self) -> &[Pos] {
        &self.positions
    }

    pub fn is_river(&self, p: Pos) -> bool {
        self.cfg.is_river(p)
    }

    /// Orchard cells where an apple could grow this step.
    pub fn growth_eligible(&self) -> Vec<Pos> {
        self.all_cells()
            .filter(|&p| {
                self.cfg.is_orchard(p) && !self.has_apple(p) && !self.positions.contains(&p)
            })
            .collect()
    }

    fn all_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.cfg.height).flat_map(move |r| (0..self.cfg.width).map(move |c| Pos(r, c)))
    }

    fn cell_code(&self, p: Pos, own: Pos) -> u8 {
        let mut code = if self.cfg.is_river(p) {
            if self.has_waste(p) {
                WASTE
            } else {
                RIVER
            }
        } else if self.cfg.is_orchard(p) {
            if self.has_apple(p) {
                APPLE
            } else {
                ORCHARD
            }
        } else {
            GROUND
        };
        if p != own && self.positions.contains(&p) {
            code |= AGENT_BIT;
        }
        code
    }

    fn observe(&self, agent: usize) -> ObservationKey {
        let own = self.positions[agent];
        encode_observation(TAG, self.cfg.grid(), own, self.cfg.view, None, |p| {
            self.cell_code(p, own)
        })
    }

    fn info(&self, grown: usize, eligible: usize) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("river_cells".into(), self.cfg.river_cells() as f64),
            ("waste".into(), self.waste_count() as f64),
            ("waste_fraction".into(), self.waste_fraction()),
            (
                "apples".into(),
                self.apples.iter().filter(|&&a| a).count() as f64,
            ),
            ("apples_grown".into(), grown as f64),
            ("growth_eligible".into(), eligible as f64),
            ("time".into(), self.time as f64),
        ])
    }

    fn result(
        &self,
        team: f64,
        events: Vec<EnvEvent>,
        grown: usize,
        eligible: usize,
    ) -> StepResult {
        StepResult {
            observations: (0..self.positions.len()).map(|i| self.observe(i)).collect(),
            rewards: vec![team; self.positions.len()],
            team_reward: team,
            done: self.done,
            info: self.info(grown, eligible),
            events,
        }
    }
}

impl Environment for CleanupEnv {
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
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.positions = self.cfg.agents.clone();
        self.waste.fill(false);
        self.apples.fill(false);
        let river: Vec<Pos> = self.all_cells().filter(|&p| self.cfg.is_river(p)).collect();
        let picks = rand::seq::index::sample(&mut self.rng, river.len(), self.cfg.initial_waste);
        for i in picks {
            let idx = self.idx(river[i]);
            self.waste[idx] = true;
        }
        self.time = 0;
        self.done = false;
        self.result(0.0, Vec::new(), 0, 0)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        check_actions(actions, self.positions.len(), N_ACTIONS)?;
        let grid = self.cfg.grid();
        let mut events = Vec::new();
        let deltas: Vec<(isize, isize)> = actions
            .iter()
            .map(|&a| match a {
                UP => (-1, 0),
                DOWN => (1, 0),
                LEFT => (0, -1),
                RIGHT => (0, 1),
                _ => (0, 0),
            })
            .collect();
        resolve_moves(grid, &mut self.positions, &deltas, &mut events);

        for (agent, &a) in actions.iter().enumerate() {
            if a != CLEAN {
                continue;
            }
            let pos = self.positions[agent];
            let mut cleaned = Vec::new();
            for d in 1..=self.cfg.clean_length {
                let Some(p) = grid.offset(pos, -(d as isize), 0) else {
                    break;
                };
                let idx = self.idx(p);
                if self.waste[idx] {
                    self.waste[idx] = false;
                    cleaned.push(p);
                }
            }
            if !cleaned.is_empty() {
                events.push(EnvEvent::Clean {
                    agent,
                    cells: cleaned,
                });
            }
        }

        let mut team = 0.0;
        for agent in 0..self.positions.len() {
            let p = self.positions[agent];
            let idx = self.idx(p);
            if self.apples[idx] {
                self.apples[idx] = false;
                team += self.cfg.apple_reward;
                events.push(EnvEvent::CollectApple { agent, cell: p });
            }
        }

        // Draw unconditionally so the stream does not depend on the cap state.
        let spawn_draw: f64 = self.rng.gen();
        if spawn_draw < self.cfg.waste_spawn_prob && self.waste_count() < self.cfg.waste_limit() {
            let clean: Vec<Pos> = self
                .all_cells()
                .filter(|&p| self.cfg.is_river(p) && !self.has_waste(p))
                .collect();
            if !clean.is_empty() {
                let cell = clean[self.rng.gen_range(0..clean.len())];
                let idx = self.idx(cell);
                self.waste[idx] = true;
                events.push(EnvEvent::SpawnWaste { cell });
            }
        }

        let prob = apple_growth_probability(
            self.waste_fraction(),
            self.cfg.apple_growth_max,
            self.cfg.waste_cap,
        );
        let eligible = self.growth_eligible();
        let mut grown = 0;
        for &cell in &eligible {
            if self.rng.gen::<f64>() < prob {
                let idx = self.idx(cell);
                self.apples[idx] = true;
                grown += 1;
                events.push(EnvEvent::GrowApple { cell });
            }
        }

        self.time += 1;
        self.done = self.time >= self.cfg.episode_length;
        Ok(self.result(team, events, grown, eligible.len()))
    }
}
