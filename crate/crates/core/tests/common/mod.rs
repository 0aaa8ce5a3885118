//! Independent reference implementations and audits shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use std::path::Path;

use cons_marl::config::{Algorithm, ExperimentConfig};
use cons_marl::envs::cleanup::{self, CleanupConfig, CleanupEnv};
use cons_marl::envs::ft::{self, BoxState, FtConfig, FtEnv, Item};
use cons_marl::envs::pgm::{self, PgmConfig, PgmEnv};
use cons_marl::envs::{EnvEvent, Environment, Pos};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod criteria;

// ---------------------------------------------------------------- oracles

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `|A| * sigma / sqrt(|A|-1)` with the population standard deviation.
pub fn confidence(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = 1.0 / n;
    let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (n * var.sqrt() / (n - 1.0).sqrt()).clamp(0.0, 1.0)
}

pub fn neg_weight(x: u64, e_i: u64, a: f64) -> f64 {
    1.0 / ((1.0 - a) / e_i as f64 * x as f64 + a)
}

/// A teacher's message in plain tuple form:
/// `(best, best_prob, worst, worst_prob, prestige)`.
pub type Msg = (usize, f64, usize, f64, f64);

/// Policy after assimilating `msgs`, written directly from the update rule:
/// for each action, each teacher that named it best pulls its probability
/// up toward the teacher's value (if higher) and each teacher that named it
/// worst pushes it down (if lower), weighted by the softmax of prestige
/// among the teachers in that set; the result is softmax-normalized.
/// Returns `None` when no probability moved.
pub fn oracle_assimilate(
    student: &[f64],
    msgs: &[Msg],
    w_p: f64,
    w_n: f64,
    tau: f64,
    use_pos: bool,
    use_neg: bool,
) -> Option<Vec<f64>> {
    let n = student.len();
    let mut out = student.to_vec();
    for a in 0..n {
        let pos: Vec<&Msg> = msgs.iter().filter(|m| m.0 == a).collect();
        let neg: Vec<&Msg> = msgs.iter().filter(|m| m.2 == a).collect();
        let pa = student[a];
        let mut delta = 0.0;
        if use_pos && !pos.is_empty() {
            let wts = softmax(&pos.iter().map(|m| m.4).collect::<Vec<_>>());
            for (m, w) in pos.iter().zip(wts) {
                if m.1 > pa {
                    delta += w_p * w * tau * (m.1 - pa);
                }
            }
        }
        if use_neg && !neg.is_empty() {
            let wts = softmax(&neg.iter().map(|m| m.4).collect::<Vec<_>>());
            for (m, w) in neg.iter().zip(wts) {
                if m.3 < pa {
                    delta += w_n * w * tau * (m.3 - pa);
                }
            }
        }
        out[a] = pa + delta;
    }
    if out.iter().zip(student).all(|(x, y)| x == y) {
        return None;
    }
    Some(softmax(&out))
}

/// Selection probabilities of confidence-gated exploration, by enumeration:
/// argmax with probability `c`, otherwise a renormalized draw after
/// removing the `q` worst actions (`q` from the interval holding `c`).
pub fn oracle_targeted(p: &[f64], c: f64) -> Vec<f64> {
    let n = p.len();
    let slots = n - 1;
    let mut q = 1;
    for k in 1..=slots {
        let lo = (k - 1) as f64 / slots as f64;
        let hi = k as f64 / slots as f64;
        if (c >= lo && c < hi) || (k == slots && c >= hi) {
            q = k;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // worst first; among equal probabilities the higher index goes first
    idx.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap().then(b.cmp(&a)));
    let removed = &idx[..q];
    let mass: f64 = (0..n).filter(|a| !removed.contains(a)).map(|a| p[a]).sum();
    let mut best = 0;
    for a in 1..n {
        if p[a] > p[best] {
            best = a;
        }
    }
    (0..n)
        .map(|a| {
            let explore = if removed.contains(&a) {
                0.0
            } else {
                p[a] / mass
            };
            (1.0 - c) * explore + if a == best { c } else { 0.0 }
        })
        .collect()
}

// ---------------------------------------------------------------- audits

fn random_actions(
    rng: &mut ChaCha8Rng,
    n_agents: usize,
    n_actions: usize,
    stay: usize,
    stickiness: f64,
) -> Vec<usize> {
    (0..n_agents)
        .map(|_| {
            if rng.gen::<f64>() < stickiness {
                stay
            } else {
                rng.gen_range(0..n_actions)
            }
        })
        .collect()
}

/// Check that the episode ends exactly at `done` and refuses further steps.
fn check_done_once(env: &mut dyn Environment, steps: usize, limit: usize) -> Result<(), String> {
    if steps > limit {
        return Err(format!("episode ran {steps} steps, limit {limit}"));
    }
    let n = env.n_agents();
    if env.step(&vec![0; n]).is_ok() {
        return Err("step accepted after done".into());
    }
    Ok(())
}

/// PGM audit over random-policy episodes: stone quota, one gold per
/// (agent, mine), gold only on exactly the mining-duration-th consecutive step, and
/// rewards equal to the additive composition of logged events.
pub fn audit_pgm(cfg: &PgmConfig, episodes: usize, seed: u64) -> Result<usize, String> {
    let mut env = PgmEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.agents.len();
    let mut golds = 0;
    for ep in 0..episodes {
        env.reset(ep as u64);
        let mut streak = vec![vec![0usize; cfg.gold_mines.len()]; n];
        let mut stones = vec![vec![0usize; cfg.stone_piles.len()]; n];
        let mut gold = vec![vec![false; cfg.gold_mines.len()]; n];
        // uniform, sticky, and drifting towards the nearest mine so the
        // gold path is reached on the larger maps
        let mode = ep % 3;
        let mut steps = 0;
        loop {
            let actions = if mode == 2 {
                env.positions()
                    .iter()
                    .map(|&p| {
                        if rng.gen::<f64>() < 0.2 {
                            return rng.gen_range(0..pgm::N_ACTIONS);
                        }
                        let m = *cfg
                            .gold_mines
                            .iter()
                            .min_by_key(|m| m.manhattan(p))
                            .unwrap();
                        if m.row() < p.row() {
                            pgm::UP
                        } else if m.row() > p.row() {
                            pgm::DOWN
                        } else if m.col() > p.col() {
                            pgm::RIGHT
                        } else if m.col() < p.col() {
                            pgm::LEFT
                        } else {
                            pgm::STAY
                        }
                    })
                    .collect()
            } else {
                let stickiness = if mode == 0 { 0.0 } else { 0.7 };
                random_actions(&mut rng, n, pgm::N_ACTIONS, pgm::STAY, stickiness)
            };
            let r = env.step(&actions).map_err(|e| e.to_string())?;
            steps += 1;
            let mut expected = vec![cfg.step_cost; n];
            for (i, &p) in env.positions().iter().enumerate() {
                for (m, &mine) in cfg.gold_mines.iter().enumerate() {
                    if p == mine && !gold[i][m] {
                        streak[i][m] += 1;
                    } else if p != mine {
                        streak[i][m] = 0;
                    }
                }
            }
            for ev in &r.events {
                match *ev {
                    EnvEvent::CollectStone { agent, pile, .. } => {
                        stones[agent][pile] += 1;
                        if stones[agent][pile] > cfg.stone_quota {
                            return Err(format!("agent {agent} exceeded quota at pile {pile}"));
                        }
                        expected[agent] += cfg.stone_reward;
                    }
                    EnvEvent::MineStep {
                        agent,
                        mine,
                        consecutive,
                    } => {
                        if consecutive != streak[agent][mine] || consecutive >= cfg.mining_duration
                        {
                            return Err(format!("bad mining streak {consecutive}"));
                        }
                        expected[agent] += cfg.mining_penalty;
                    }
                    EnvEvent::CollectGold {
                        agent,
                        mine,
                        consecutive,
                    } => {
                        if gold[agent][mine] {
                            return Err(format!("agent {agent} got gold twice from mine {mine}"));
                        }
                        if consecutive != cfg.mining_duration
                            || streak[agent][mine] != cfg.mining_duration
                        {
                            return Err(format!(
                                "gold after {} consecutive steps, expected {}",
                                streak[agent][mine], cfg.mining_duration
                            ));
                        }
                        gold[agent][mine] = true;
                        golds += 1;
                        expected[agent] += cfg.mining_penalty + cfg.gold_reward;
                    }
                    _ => {}
                }
            }
            for (i, (&got, &want)) in r.rewards.iter().zip(&expected).enumerate() {
                if (got - want).abs() > 1e-9 {
                    return Err(format!("agent {i} reward {got}, events imply {want}"));
                }
            }
            for i in 0..n {
                for (pile, &taken) in stones[i].iter().enumerate() {
                    if env.stones_taken(i, pile) != taken {
                        return Err("stone bookkeeping diverged".into());
                    }
                }
            }
            if r.done {
                break;
            }
        }
        check_done_once(&mut env, steps, cfg.episode_length)?;
        if steps != cfg.episode_length {
            return Err(format!("PGM episode ended early at {steps}"));
        }
    }
    Ok(golds)
}

/// FT audit: exactly one treasure among the red boxes, each box opened (and
/// charged) at most once, items only from opened boxes, at most one treasure
/// per episode, and the episode ends on the treasure or at the limit.
pub fn audit_ft(cfg: &FtConfig, episodes: usize, seed: u64) -> Result<usize, String> {
    let mut env = FtEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.agents.len();
    let mut treasures = 0;
    for ep in 0..episodes {
        let start = env.reset(seed.wrapping_mul(31).wrapping_add(ep as u64));
        if start.info["red_boxes"] != cfg.red_boxes.len() as f64
            || start.info["yellow_boxes"] != cfg.yellow_boxes.len() as f64
            || start.info["treasure_boxes"] != 1.0
        {
            return Err("wrong box inventory".into());
        }
        let t = env.treasure_index().ok_or("no treasure box")?;
        if t >= cfg.red_boxes.len() {
            return Err(format!("treasure in non-red box {t}"));
        }
        let n_boxes = cfg.red_boxes.len() + cfg.yellow_boxes.len();
        let mut opened = vec![false; n_boxes];
        let mut found = 0;
        let mut steps = 0;
        // bias toward open/pick-up so boxes actually get opened
        loop {
            let actions: Vec<usize> = (0..n)
                .map(|_| match rng.gen_range(0..10) {
                    0..=2 => ft::OPEN,
                    3..=4 => ft::PICK_UP,
                    _ => rng.gen_range(0..ft::N_ACTIONS),
                })
                .collect();
            let r = env.step(&actions).map_err(|e| e.to_string())?;
            steps += 1;
            let mut expected = cfg.step_cost;
            for ev in &r.events {
                match ev {
                    EnvEvent::OpenBox { index, openers, .. } => {
                        if opened[*index] {
                            return Err(format!("box {index} opened twice"));
                        }
                        if openers.len() < cfg.min_openers {
                            return Err("box opened by too few agents".into());
                        }
                        opened[*index] = true;
                        expected += if *index < cfg.red_boxes.len() {
                            cfg.open_red_cost
                        } else {
                            cfg.open_yellow_cost
                        };
                    }
                    EnvEvent::CollectItem { index, item, .. } => {
                        if !opened[*index] {
                            return Err(format!("item taken from closed box {index}"));
                        }
                        match item {
                            Item::Treasure => {
                                found += 1;
                                expected += cfg.treasure_reward;
                            }
                            Item::Coin => expected += cfg.coin_reward,
                        }
                    }
                    _ => {}
                }
            }
            if (r.team_reward - expected).abs() > 1e-9 {
                return Err(format!(
                    "team reward {} but events imply {expected}",
                    r.team_reward
                ));
            }
            if r.rewards.iter().any(|&x| x != r.team_reward) {
                return Err("team reward not replicated".into());
            }
            if found > 1 {
                return Err("more than one treasure in an episode".into());
            }
            if r.done {
                if found == 0 && steps != cfg.episode_length {
                    return Err("episode ended without treasure before the limit".into());
                }
                break;
            }
            if found > 0 {
                return Err("episode continued after the treasure".into());
            }
        }
        for (i, &o) in opened.iter().enumerate() {
            let state_open = env.box_state(i) != BoxState::Closed;
            if o != state_open {
                return Err(format!("box {i} state disagrees with event log"));
            }
        }
        check_done_once(&mut env, steps, cfg.episode_length)?;
        treasures += found;
    }
    Ok(treasures)
}

/// Cleanup audit: waste never above the cap, apples never in the river,
/// each apple collected pays the team reward.
pub fn audit_cleanup(cfg: &CleanupConfig, episodes: usize, seed: u64) -> Result<f64, String> {
    let mut env = CleanupEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.agents.len();
    let limit = (cfg.waste_cap * cfg.river_cells() as f64 + 1e-9).floor();
    let mut max_fraction: f64 = 0.0;
    for ep in 0..episodes {
        env.reset(seed ^ (ep as u64) << 8);
        let mut steps = 0;
        loop {
            let actions = random_actions(&mut rng, n, cleanup::N_ACTIONS, cleanup::STAY, 0.0);
            let r = env.step(&actions).map_err(|e| e.to_string())?;
            steps += 1;
            let waste = r.info["waste"];
            if waste > limit || r.info["waste_fraction"] > cfg.waste_cap + 1e-12 {
                return Err(format!("waste {waste} above cap {limit}"));
            }
            max_fraction = max_fraction.max(r.info["waste_fraction"]);
            for row in 0..cfg.height {
                for col in 0..cfg.width {
                    let p = Pos(row, col);
                    if env.is_river(p) && env.has_apple(p) {
                        return Err(format!("apple in river at {p:?}"));
                    }
                }
            }
            let apples = r
                .events
                .iter()
                .filter(|e| matches!(e, EnvEvent::CollectApple { .. }))
                .count();
            if (r.team_reward - apples as f64 * cfg.apple_reward).abs() > 1e-9 {
                return Err("apple reward mismatch".into());
            }
            if r.done {
                break;
            }
        }
        check_done_once(&mut env, steps, cfg.episode_length)?;
        if steps != cfg.episode_length {
            return Err("cleanup episode ended early".into());
        }
    }
    Ok(max_fraction)
}

/// Empirical per-cell apple growth frequency with waste held at zero
/// (spawning off, agents standing still), over `steps` environment steps.
pub fn apple_growth_frequency(steps: usize, seed: u64) -> (f64, f64) {
    let cfg = CleanupConfig {
        waste_spawn_prob: 0.0,
        initial_waste: 0,
        ..CleanupConfig::default()
    };
    let mut env = CleanupEnv::new(cfg.clone()).unwrap();
    let stay = vec![cleanup::STAY; cfg.agents.len()];
    let mut trials = 0.0;
    let mut grown = 0.0;
    let mut ep = 0;
    env.reset(seed);
    for _ in 0..steps {
        let r = env.step(&stay).unwrap();
        assert_eq!(r.info["waste"], 0.0);
        trials += r.info["growth_eligible"];
        grown += r.info["apples_grown"];
        if r.done {
            ep += 1;
            env.reset(seed.wrapping_add(ep));
        }
    }
    (grown / trials, trials)
}

// ---------------------------------------------------------------- runs

/// A short PGM-3ag experiment writing into `dir`.
pub fn small_pgm3(algo: Algorithm, dir: &Path, episodes: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::pgm3();
    c.algo = algo;
    c.episodes = episodes;
    c.seeds = vec![7];
    c.sharing.start_episode = 5;
    c.sharing.ask_budget = 200;
    c.eval.interval = 10;
    c.eval.episodes = 2;
    c.output.dir = dir.to_path_buf();
    c.output.record_wall_clock = false;
    c
}
