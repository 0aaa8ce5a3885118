//! Cooperative gridworld tasks behind one episodic interface.
//!
//! * [`pgm`]: patient gold miner, individual rewards.
//! * [`ft`]: find the treasure, team reward.
//! * [`cleanup`]: apple/waste public-goods game, team reward.
//!
//! Observations are symbolic and encoded into an [`ObservationKey`] byte
//! string that tabular learners use directly as a table key.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod cleanup;
pub mod ft;
pub mod pgm;

pub use cleanup::{CleanupConfig, CleanupEnv};
pub use ft::{FtConfig, FtEnv};
pub use pgm::{PgmConfig, PgmEnv};

/// Cell code for positions outside the grid.
pub const UNSEEN: u8 = 0xFF;
/// Bit set on a view cell that holds another agent.
pub const AGENT_BIT: u8 = 0x80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {agent}: action {action} out of range for {n_actions} actions")]
    InvalidAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("episode already finished; call reset")]
    EpisodeOver,
    #[error("invalid environment config: {0}")]
    Config(String),
}

/// Canonical byte encoding of one agent's observation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservationKey(Vec<u8>);

impl ObservationKey {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        hex::decode(s).map(Self)
    }
}

impl fmt::Debug for ObservationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObservationKey({})", self.to_hex())
    }
}

impl fmt::Display for ObservationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ObservationKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ObservationKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Grid coordinate, `(row, col)`; serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos(pub usize, pub usize);

impl Pos {
    pub fn row(self) -> usize {
        self.0
    }

    pub fn col(self) -> usize {
        self.1
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.0.abs_diff(other.0) + self.1.abs_diff(other.1)
    }
}

/// Rectangular grid bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn contains(&self, p: Pos) -> bool {
        p.0 < self.height && p.1 < self.width
    }

    /// Cell reached by moving `(dr, dc)` from `p`, if it is on the grid.
    pub fn offset(&self, p: Pos, dr: isize, dc: isize) -> Option<Pos> {
        let r = p.0.checked_add_signed(dr)?;
        let c = p.1.checked_add_signed(dc)?;
        let q = Pos(r, c);
        self.contains(q).then_some(q)
    }
}

/// Something that happened during a step, for audits and event logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EnvEvent {
    Move {
        agent: usize,
        from: Pos,
        to: Pos,
    },
    CollectStone {
        agent: usize,
        pile: usize,
        count: usize,
    },
    MineStep {
        agent: usize,
        mine: usize,
        consecutive: usize,
    },
    CollectGold {
        agent: usize,
        mine: usize,
        consecutive: usize,
    },
    OpenBox {
        index: usize,
        color: ft::BoxColor,
        openers: Vec<usize>,
    },
    CollectItem {
        index: usize,
        item: ft::Item,
        agents: Vec<usize>,
    },
    Clean {
        agent: usize,
        cells: Vec<Pos>,
    },
    SpawnWaste {
        cell: Pos,
    },
    GrowApple {
        cell: Pos,
    },
    CollectApple {
        agent: usize,
        cell: Pos,
    },
}

/// Per-step output of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<ObservationKey>,
    /// Reward credited to each agent this step.
    pub rewards: Vec<f64>,
    /// Team return increment: the sum of individual rewards for PGM, the
    /// shared reward (counted once) for FT and Cleanup.
    pub team_reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
    pub events: Vec<EnvEvent>,
}

/// A cooperative multi-agent episodic task.
pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn episode_length(&self) -> usize;
    /// Restore the configured start state and seed the internal random stream.
    fn reset(&mut self, seed: u64) -> StepResult;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;
}

/// Which task to build, and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Pgm(PgmConfig),
    Ft(FtConfig),
    Cleanup(CleanupConfig),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::Pgm(c) => c.validate(),
            EnvConfig::Ft(c) => c.validate(),
            EnvConfig::Cleanup(c) => c.validate(),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            EnvConfig::Pgm(c) => c.agents.len(),
            EnvConfig::Ft(c) => c.agents.len(),
            EnvConfig::Cleanup(c) => c.agents.len(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvConfig::Pgm(_) => pgm::N_ACTIONS,
            EnvConfig::Ft(_) => ft::N_ACTIONS,
            EnvConfig::Cleanup(_) => cleanup::N_ACTIONS,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Pgm(_) => "pgm",
            EnvConfig::Ft(_) => "ft",
            EnvConfig::Cleanup(_) => "cleanup",
        }
    }
}

/// Validate the config and build the environment it describes.
pub fn make_env(config: &EnvConfig) -> Result<Box<dyn Environment>, EnvError> {
    config.validate()?;
    Ok(match config {
        EnvConfig::Pgm(c) => Box::new(PgmEnv::new(c.clone())?),
        EnvConfig::Ft(c) => Box::new(FtEnv::new(c.clone())?),
        EnvConfig::Cleanup(c) => Box::new(CleanupEnv::new(c.clone())?),
    })
}

pub(crate) fn check_actions(
    actions: &[usize],
    n_agents: usize,
    n_actions: usize,
) -> Result<(), EnvError> {
    if actions.len() != n_agents {
        return Err(EnvError::ActionCount {
            expected: n_agents,
            got: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
        return Err(EnvError::InvalidAction {
            agent,
            action,
            n_actions,
        });
    }
    Ok(())
}

pub(crate) fn check_positions(grid: Grid, groups: &[(&str, &[Pos])]) -> Result<(), EnvError> {
    if grid.height == 0 || grid.width == 0 {
        return Err(EnvError::Config("grid dimensions must be positive".into()));
    }
    let mut seen: BTreeMap<Pos, &str> = BTreeMap::new();
    for (name, positions) in groups {
        for &p in positions.iter() {
            if !grid.contains(p) {
                return Err(EnvError::Config(format!(
                    "{name} position [{}, {}] is outside the {}x{} grid",
                    p.0, p.1, grid.height, grid.width
                )));
            }
            if let Some(other) = seen.insert(p, name) {
                return Err(EnvError::Config(format!(
                    "{name} position [{}, {}] overlaps a {other} entity",
                    p.0, p.1
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_view(view: [usize; 2]) -> Result<(), EnvError> {
    if view[0] == 0 || view[1] == 0 || view[0] > 255 || view[1] > 255 {
        return Err(EnvError::Config(format!(
            "view dimensions must be in 1..=255, got {view:?}"
        )));
    }
    Ok(())
}

/// Move agents one at a time in id order. A move succeeds when the target is
/// on the grid and not occupied by another agent at that moment, so when two
/// agents head for the same cell the lower id wins.
pub(crate) fn resolve_moves(
    grid: Grid,
    positions: &mut [Pos],
    deltas: &[(isize, isize)],
    events: &mut Vec<EnvEvent>,
) {
    for agent in 0..positions.len() {
        let (dr, dc) = deltas[agent];
        if dr == 0 && dc == 0 {
            continue;
        }
        let from = positions[agent];
        let Some(to) = grid.offset(from, dr, dc) else {
            continue;
        };
        if positions.iter().any(|&p| p == to) {
            continue;
        }
        positions[agent] = to;
        events.push(EnvEvent::Move { agent, from, to });
    }
}

/// Encode `[tag, row, col, (time lo, time hi)?, view cells...]`.
///
/// The view is `view[0]` rows by `view[1]` columns with the agent at
/// `(view[0]/2, view[1]/2)`; cells off the grid read [`UNSEEN`].
pub(crate) fn encode_observation(
    tag: u8,
    grid: Grid,
    own: Pos,
    view: [usize; 2],
    time: Option<usize>,
    mut cell: impl FnMut(Pos) -> u8,
) -> ObservationKey {
    let mut bytes = Vec::with_capacity(5 + view[0] * view[1] + 4);
    bytes.push(tag);
    push_coord(&mut bytes, own.0);
    push_coord(&mut bytes, own.1);
    if let Some(t) = time {
        bytes.extend_from_slice(&(t.min(u16::MAX as usize) as u16).to_le_bytes());
    }
    let (cr, cc) = ((view[0] / 2) as isize, (view[1] / 2) as isize);
    for vr in 0..view[0] as isize {
        for vc in 0..view[1] as isize {
            let code = match grid.offset(own, vr - cr, vc - cc) {
                Some(p) => cell(p),
                None => UNSEEN,
            };
            bytes.push(code);
        }
    }
    ObservationKey(bytes)
}

fn push_coord(bytes: &mut Vec<u8>, v: usize) {
    bytes.extend_from_slice(&(v.min(u16::MAX as usize) as u16).to_le_bytes());
}
