//! Versioned text checkpoints of a run's learning state.
//!
//! The file is a magic line followed by sections. Each section starts with
//! `[name] lines=<n> sha256=<hex>` and holds exactly `n` body lines whose
//! digest (lines joined by `\n`) must match. Rows are written in sorted key
//! order and floats in shortest round-trip form, so save, load and save
//! again yields identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::Agent;
use crate::envs::ObservationKey;
use crate::learner::QTable;
use crate::protocol::{BudgetState, VisitCounter};
use crate::rng::RngState;

pub const MAGIC: &str = "cons-checkpoint v1";
const END: &str = "[end]";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (expected first line `{MAGIC}`)")]
    BadMagic,
    #[error("checkpoint section `{section}` is corrupt: {reason}")]
    Integrity { section: String, reason: String },
    #[error("checkpoint is truncated after section `{0}`")]
    Truncated(String),
    #[error("checkpoint does not match the run config: {0}")]
    Mismatch(String),
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub algo: String,
    pub env_kind: String,
    /// Training episodes completed.
    pub episode: u64,
    /// Training environment steps taken so far (drives epsilon).
    pub env_steps: u64,
    pub agents: Vec<Agent>,
}

struct Section {
    name: String,
    lines: Vec<String>,
}

fn digest(lines: &[String]) -> String {
    hex::encode(Sha256::digest(lines.join("\n").as_bytes()))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut sections = vec![Section {
            name: "header".into(),
            lines: vec![
                format!("seed {}", self.seed),
                format!("algo {}", self.algo),
                format!("env {}", self.env_kind),
                format!("episode {}", self.episode),
                format!("env_steps {}", self.env_steps),
                format!("agents {}", self.agents.len()),
            ],
        }];
        for agent in &self.agents {
            let id = agent.id;
            let b = agent.budget;
            sections.push(Section {
                name: format!("agent {id} budget"),
                lines: vec![
                    format!("ask {} {}", b.ask_initial, b.ask_remaining),
                    format!("give {} {}", b.give_initial, b.give_remaining),
                ],
            });
            let rng_line = |label: &str, s: RngState| {
                format!(
                    "{label} {} {} {}",
                    hex::encode(s.seed),
                    s.stream,
                    s.word_pos
                )
            };
            sections.push(Section {
                name: format!("agent {id} rng"),
                lines: vec![
                    rng_line("action", RngState::capture(&agent.action_rng)),
                    rng_line("protocol", RngState::capture(&agent.protocol_rng)),
                ],
            });
            sections.push(Section {
                name: format!("agent {id} visits"),
                lines: agent
                    .visits
                    .sorted()
                    .into_iter()
                    .map(|(k, n)| format!("{} {n}", k.to_hex()))
                    .collect(),
            });
            let mut q_lines = vec![format!(
                "shape {} {}",
                agent.q.n_actions(),
                agent.q.q_init()
            )];
            for (k, row) in agent.q.sorted_rows() {
                let mut line = k.to_hex();
                for v in row {
                    write!(line, " {v}").expect("writing to a String cannot fail");
                }
                q_lines.push(line);
            }
            sections.push(Section {
                name: format!("agent {id} qtable"),
                lines: q_lines,
            });
        }

        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for s in &sections {
            writeln!(
                out,
                "[{}] lines={} sha256={}",
                s.name,
                s.lines.len(),
                digest(&s.lines)
            )
            .expect("writing to a String cannot fail");
            for l in &s.lines {
                out.push_str(l);
                out.push('\n');
            }
        }
        out.push_str(END);
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let sections = split_sections(text)?;
        let mut iter = sections.iter();
        let header = iter
            .next()
            .ok_or(CheckpointError::Truncated(MAGIC.into()))?;
        if header.name != "header" {
            return Err(integrity(&header.name, "expected the header section first"));
        }
        let mut h = Fields::new(header);
        let seed = h.num("seed")?;
        let algo = h.word("algo")?.to_string();
        let env_kind = h.word("env")?.to_string();
        let episode = h.num("episode")?;
        let env_steps = h.num("env_steps")?;
        let n_agents: usize = h.num("agents")?;

        let mut agents = Vec::with_capacity(n_agents);
        for id in 0..n_agents {
            let mut next = |suffix: &str| {
                let want = format!("agent {id} {suffix}");
                match iter.next() {
                    Some(s) if s.name == want => Ok(s),
                    Some(s) => Err(integrity(&s.name, &format!("expected section `{want}`"))),
                    None => Err(CheckpointError::Truncated(format!("agent {id}"))),
                }
            };
            let budget_s = next("budget")?;
            let rng_s = next("rng")?;
            let visits_s = next("visits")?;
            let q_s = next("qtable")?;

            let mut b = Fields::new(budget_s);
            let (ask_initial, ask_remaining) = b.pair("ask")?;
            let (give_initial, give_remaining) = b.pair("give")?;
            if ask_remaining > ask_initial || give_remaining > give_initial {
                return Err(integrity(
                    &budget_s.name,
                    "remaining budget exceeds initial",
                ));
            }
            let budget = BudgetState {
                ask_initial,
                ask_remaining,
                give_initial,
                give_remaining,
            };

            let mut r = Fields::new(rng_s);
            let action_rng = r.rng("action")?.restore();
            let protocol_rng = r.rng("protocol")?.restore();

            let mut visits = VisitCounter::default();
            for line in &visits_s.lines {
                let (k, n) = line
                    .split_once(' ')
                    .ok_or_else(|| integrity(&visits_s.name, "malformed row"))?;
                let key = ObservationKey::from_hex(k)
                    .map_err(|e| integrity(&visits_s.name, &e.to_string()))?;
                let n = n
                    .parse()
                    .map_err(|_| integrity(&visits_s.name, "malformed count"))?;
                visits.set(key, n);
            }

            let mut q_lines = q_s.lines.iter();
            let shape = q_lines
                .next()
                .ok_or_else(|| integrity(&q_s.name, "missing shape row"))?;
            let parts: Vec<&str> = shape.split(' ').collect();
            let (n_actions, q_init) = match parts.as_slice() {
                ["shape", a, init] => (
                    a.parse::<usize>()
                        .map_err(|_| integrity(&q_s.name, "bad action count"))?,
                    init.parse::<f64>()
                        .map_err(|_| integrity(&q_s.name, "bad initial value"))?,
                ),
                _ => return Err(integrity(&q_s.name, "malformed shape row")),
            };
            let mut q = QTable::new(n_actions, q_init);
            for line in q_lines {
                let mut parts = line.split(' ');
                let key = ObservationKey::from_hex(parts.next().unwrap_or(""))
                    .map_err(|e| integrity(&q_s.name, &e.to_string()))?;
                let row = parts
                    .map(str::parse::<f64>)
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|_| integrity(&q_s.name, "malformed value"))?;
                q.insert_row(key, row)
                    .map_err(|e| integrity(&q_s.name, &e.to_string()))?;
            }
            agents.push(Agent {
                id,
                q,
                visits,
                budget,
                action_rng,
                protocol_rng,
            });
        }
        if let Some(extra) = iter.next() {
            return Err(integrity(&extra.name, "unexpected section"));
        }
        Ok(Self {
            seed,
            algo,
            env_kind,
            episode,
            env_steps,
            agents,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn integrity(section: &str, reason: &str) -> CheckpointError {
    CheckpointError::Integrity {
        section: section.to_string(),
        reason: reason.to_string(),
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>, CheckpointError> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(CheckpointError::BadMagic);
    }
    let mut sections = Vec::new();
    let mut last = MAGIC.to_string();
    loop {
        let head = lines
            .next()
            .ok_or_else(|| CheckpointError::Truncated(last.clone()))?;
        if head == END {
            break;
        }
        let (name, rest) = head
            .strip_prefix('[')
            .and_then(|h| h.split_once("] "))
            .ok_or_else(|| integrity(&last, "malformed section header follows it"))?;
        let mut count = None;
        let mut sha = None;
        for field in rest.split(' ') {
            if let Some(v) = field.strip_prefix("lines=") {
                count = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("sha256=") {
                sha = Some(v.to_string());
            }
        }
        let (count, sha) = match (count, sha) {
            (Some(c), Some(s)) => (c, s),
            _ => return Err(integrity(name, "malformed section header")),
        };
        let body: Vec<String> = lines.by_ref().take(count).map(str::to_string).collect();
        if body.len() != count {
            return Err(integrity(name, "section body is truncated"));
        }
        if digest(&body) != sha {
            return Err(integrity(name, "sha256 mismatch"));
        }
        last = name.to_string();
        sections.push(Section {
            name: name.to_string(),
            lines: body,
        });
    }
    Ok(sections)
}

/// Keyed lines of a section, consumed in order.
struct Fields<'a> {
    section: &'a Section,
    pos: usize,
}

impl<'a> Fields<'a> {
    fn new(section: &'a Section) -> Self {
        Self { section, pos: 0 }
    }

    fn values(&mut self, key: &str) -> Result<Vec<&'a str>, CheckpointError> {
        let line = self
            .section
            .lines
            .get(self.pos)
            .ok_or_else(|| integrity(&self.section.name, &format!("missing `{key}`")))?;
        self.pos += 1;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(integrity(&self.section.name, &format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn word(&mut self, key: &str) -> Result<&'a str, CheckpointError> {
        match self.values(key)?.as_slice() {
            [v] => Ok(v),
            _ => Err(integrity(&self.section.name, &format!("malformed `{key}`"))),
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CheckpointError> {
        self.word(key)?
            .parse()
            .map_err(|_| integrity(&self.section.name, &format!("malformed `{key}`")))
    }

    fn pair(&mut self, key: &str) -> Result<(u64, u64), CheckpointError> {
        let name = &self.section.name;
        match self.values(key)?.as_slice() {
            [a, b] => match (a.parse(), b.parse()) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                _ => Err(integrity(name, &format!("malformed `{key}`"))),
            },
            _ => Err(integrity(name, &format!("malformed `{key}`"))),
        }
    }

    fn rng(&mut self, key: &str) -> Result<RngState, CheckpointError> {
        let name = self.section.name.clone();
        let bad = || integrity(&name, &format!("malformed `{key}` stream"));
        match self.values(key)?.as_slice() {
            [seed, stream, pos] => {
                let seed: [u8; 32] = hex::decode(seed)
                    .ok()
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(bad)?;
                Ok(RngState {
                    seed,
                    stream: stream.parse().map_err(|_| bad())?,
                    word_pos: pos.parse().map_err(|_| bad())?,
                })
            }
            _ => Err(bad()),
        }
    }
}
