//! Training and evaluation loops, metrics files and run resumption.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Agent;
use crate::baselines::{adhoctd_round, iql_select, Advice};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{Algorithm, ConfigError, ExperimentConfig};
use crate::envs::{make_env, EnvError, EnvEvent, Environment};
use crate::learner::{epsilon_schedule, greedy, q_update, LearnerError};
use crate::policy::PolicyError;
use crate::protocol::{sharing_round, BudgetState, StudentRequest, TeacherReply};
use crate::rng::{derive_seed, domain};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("learner: {0}")]
    Learner(#[from] LearnerError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("output {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub seed: u64,
    pub episode: u64,
    pub phase: Phase,
    pub team_return: f64,
    pub agent_returns: Vec<f64>,
    pub ask_used: Vec<u64>,
    pub give_used: Vec<u64>,
    pub wall_ms: u64,
}

pub const CSV_HEADER: &str =
    "seed,episode,phase,team_return,agent_returns,ask_used,give_used,wall_ms";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.episode,
            self.phase.name(),
            self.team_return,
            join(&self.agent_returns),
            join(&self.ask_used),
            join(&self.give_used),
            self.wall_ms
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        fn list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
            if s.is_empty() {
                return Some(Vec::new());
            }
            s.split(';').map(|x| x.parse().ok()).collect()
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(Self {
            seed: f[0].parse().ok()?,
            episode: f[1].parse().ok()?,
            phase: match f[2] {
                "train" => Phase::Train,
                "eval" => Phase::Eval,
                _ => return None,
            },
            team_return: f[3].parse().ok()?,
            agent_returns: list(f[4])?,
            ask_used: list(f[5])?,
            give_used: list(f[6])?,
            wall_ms: f[7].parse().ok()?,
        })
    }
}

/// Read every record of a metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(MetricsRecord::parse_csv_row)
        .collect())
}

/// A protocol message as written to the trace file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceMessage {
    Request(StudentRequest),
    Reply {
        student: usize,
        #[serde(flatten)]
        reply: TeacherReply,
    },
    Advice(Advice),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub step: usize,
    #[serde(flatten)]
    pub message: TraceMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub episode: u64,
    pub step: usize,
    #[serde(flatten)]
    pub event: EnvEvent,
}

/// What to collect besides returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    pub trace: bool,
    pub events: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeReport {
    pub team_return: f64,
    pub agent_returns: Vec<f64>,
    pub steps: usize,
    pub trace: Vec<TraceRecord>,
    pub events: Vec<EventRecord>,
    /// Steps on which at least one agent acted on shared knowledge.
    pub shared_steps: usize,
}

/// Learning state of one seed's run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub seed: u64,
    /// Training episodes completed.
    pub episode: u64,
    pub env_steps: u64,
    pub agents: Vec<Agent>,
}

impl RunState {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Self {
        let budget = BudgetState::new(config.sharing.ask_budget, config.give_budget());
        let agents = (0..config.n_agents())
            .map(|i| {
                Agent::new(
                    i,
                    config.env.n_actions(),
                    config.learner.q_init,
                    budget,
                    seed,
                )
            })
            .collect();
        Self {
            seed,
            episode: 0,
            env_steps: 0,
            agents,
        }
    }

    pub fn to_checkpoint(&self, config: &ExperimentConfig) -> Checkpoint {
        Checkpoint {
            seed: self.seed,
            algo: config.algo.name().to_string(),
            env_kind: config.env.kind().to_string(),
            episode: self.episode,
            env_steps: self.env_steps,
            agents: self.agents.clone(),
        }
    }

    pub fn from_checkpoint(
        config: &ExperimentConfig,
        ckpt: Checkpoint,
    ) -> Result<Self, HarnessError> {
        let mismatch = |m: String| HarnessError::Checkpoint(CheckpointError::Mismatch(m));
        if ckpt.algo != config.algo.name() {
            return Err(mismatch(format!("algo {} vs {}", ckpt.algo, config.algo)));
        }
        if ckpt.env_kind != config.env.kind() {
            return Err(mismatch(format!(
                "env {} vs {}",
                ckpt.env_kind,
                config.env.kind()
            )));
        }
        if ckpt.agents.len() != config.n_agents() {
            return Err(mismatch(format!(
                "{} agents vs {}",
                ckpt.agents.len(),
                config.n_agents()
            )));
        }
        if ckpt
            .agents
            .iter()
            .any(|a| a.n_actions() != config.env.n_actions())
        {
            return Err(mismatch("action count differs".into()));
        }
        Ok(Self {
            seed: ckpt.seed,
            episode: ckpt.episode,
            env_steps: ckpt.env_steps,
            agents: ckpt.agents,
        })
    }

    pub fn ask_used(&self) -> Vec<u64> {
        self.agents.iter().map(|a| a.budget.ask_used()).collect()
    }

    pub fn give_used(&self) -> Vec<u64> {
        self.agents.iter().map(|a| a.budget.give_used()).collect()
    }
}

/// One training episode: visit counting, sharing or advising, action
/// choice, environment step and Q-update, for every step until done.
pub fn train_episode(
    env: &mut dyn Environment,
    state: &mut RunState,
    config: &ExperimentConfig,
    episode: u64,
    capture: Capture,
) -> Result<EpisodeReport, HarnessError> {
    let n = state.agents.len();
    let sharing = config.sharing_params();
    let advice = config.advice_params();
    let ablation = config.algo.ablation();
    let env_seed = derive_seed(state.seed, domain::TRAIN_ENV, episode);
    let mut current = env.reset(env_seed);
    let mut report = EpisodeReport {
        agent_returns: vec![0.0; n],
        ..Default::default()
    };
    let counts_visits = config.algo != Algorithm::Iql;

    loop {
        let obs = std::mem::take(&mut current.observations);
        if counts_visits {
            for (agent, o) in state.agents.iter_mut().zip(&obs) {
                agent.visits.increment(o);
            }
        }
        let shared: Vec<Option<usize>> = match config.algo {
            Algorithm::Iql => vec![None; n],
            Algorithm::AdHocTd => {
                let out = adhoctd_round(&mut state.agents, &obs, episode, &advice);
                if capture.trace {
                    push_trace(&mut report, episode, out.requests, Vec::new(), out.advice);
                }
                out.actions
            }
            _ => {
                let out = sharing_round(&mut state.agents, &obs, episode, &sharing, ablation)?;
                if capture.trace {
                    push_trace(&mut report, episode, out.requests, out.replies, Vec::new());
                }
                out.actions
            }
        };
        if shared.iter().any(Option::is_some) {
            report.shared_steps += 1;
        }
        let epsilon = epsilon_schedule(state.env_steps, &config.learner);
        let actions: Vec<usize> = state
            .agents
            .iter_mut()
            .zip(&obs)
            .zip(&shared)
            .map(|((agent, o), s)| s.unwrap_or_else(|| iql_select(agent, o, epsilon)))
            .collect();

        let next = env.step(&actions)?;
        for (i, agent) in state.agents.iter_mut().enumerate() {
            q_update(
                &mut agent.q,
                &obs[i],
                actions[i],
                next.rewards[i],
                &next.observations[i],
                next.done,
                &config.learner,
            )?;
            report.agent_returns[i] += next.rewards[i];
        }
        report.team_return += next.team_reward;
        if capture.events {
            let step = report.steps;
            report
                .events
                .extend(next.events.iter().cloned().map(|event| EventRecord {
                    episode,
                    step,
                    event,
                }));
        }
        state.env_steps += 1;
        report.steps += 1;
        if next.done {
            return Ok(report);
        }
        current = next;
    }
}

fn push_trace(
    report: &mut EpisodeReport,
    episode: u64,
    requests: Vec<StudentRequest>,
    replies: Vec<(usize, TeacherReply)>,
    advice: Vec<Advice>,
) {
    let step = report.steps;
    let wrap = |message| TraceRecord {
        episode,
        step,
        message,
    };
    report
        .trace
        .extend(requests.into_iter().map(|r| wrap(TraceMessage::Request(r))));
    report.trace.extend(
        replies
            .into_iter()
            .map(|(student, reply)| wrap(TraceMessage::Reply { student, reply })),
    );
    report
        .trace
        .extend(advice.into_iter().map(|a| wrap(TraceMessage::Advice(a))));
}

/// One greedy episode. Agents are borrowed immutably: evaluation never
/// changes Q-values, counters, budgets or random streams.
pub fn eval_episode(
    env: &mut dyn Environment,
    agents: &[Agent],
    env_seed: u64,
) -> Result<EpisodeReport, HarnessError> {
    let mut current = env.reset(env_seed);
    let mut report = EpisodeReport {
        agent_returns: vec![0.0; agents.len()],
        ..Default::default()
    };
    loop {
        let actions: Vec<usize> = agents
            .iter()
            .zip(&current.observations)
            .map(|(a, o)| greedy(&a.q, o))
            .collect();
        let next = env.step(&actions)?;
        for (r, x) in report.agent_returns.iter_mut().zip(&next.rewards) {
            *r += x;
        }
        report.team_return += next.team_reward;
        report.steps += 1;
        if next.done {
            return Ok(report);
        }
        current = next;
    }
}

/// Train or evaluate for one episode.
pub fn run_episode(
    env: &mut dyn Environment,
    state: &mut RunState,
    config: &ExperimentConfig,
    phase: Phase,
    episode: u64,
    capture: Capture,
) -> Result<EpisodeReport, HarnessError> {
    match phase {
        Phase::Train => train_episode(env, state, config, episode, capture),
        Phase::Eval => eval_episode(
            env,
            &state.agents,
            derive_seed(state.seed, domain::EVAL_ENV, episode),
        ),
    }
}

/// Mean team and per-agent return over one evaluation block after
/// `state.episode` training episodes.
pub fn evaluate(
    env: &mut dyn Environment,
    state: &RunState,
    episodes: u64,
) -> Result<(f64, Vec<f64>), HarnessError> {
    let mut team = 0.0;
    let mut per_agent = vec![0.0; state.agents.len()];
    for k in 0..episodes {
        let seed = derive_seed(state.seed, domain::EVAL_ENV, state.episode * episodes + k);
        let r = eval_episode(env, &state.agents, seed)?;
        team += r.team_return;
        for (p, x) in per_agent.iter_mut().zip(&r.agent_returns) {
            *p += x;
        }
    }
    let m = episodes as f64;
    Ok((team / m, per_agent.into_iter().map(|x| x / m).collect()))
}

/// Outcome of one seed's run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub algo: Algorithm,
    /// `(episode, mean team return)` per evaluation block.
    pub eval_returns: Vec<(u64, f64)>,
    pub ask_used: Vec<u64>,
    pub give_used: Vec<u64>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl RunSummary {
    pub fn final_eval_return(&self) -> Option<f64> {
        self.eval_returns.last().map(|&(_, r)| r)
    }

    pub fn total_ask_used(&self) -> u64 {
        self.ask_used.iter().sum()
    }
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn trace_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.jsonl"))
}

pub fn events_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("events_seed{seed}.jsonl"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed{seed}.ckpt"))
}

fn open_out(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(io_err(path))?;
    Ok(BufWriter::new(f))
}

/// Create the output directory and check it is writable.
pub fn prepare_output_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".write-probe");
    File::create(&probe).map_err(io_err(dir))?;
    std::fs::remove_file(&probe).map_err(io_err(dir))?;
    Ok(())
}

/// Train one seed to `config.episodes`, optionally continuing from a
/// checkpoint, writing metrics (and trace/event logs if enabled) to
/// `config.output.dir`.
pub fn train_seed(
    config: &ExperimentConfig,
    seed: u64,
    resume: Option<Checkpoint>,
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let dir = config.output.dir.clone();
    prepare_output_dir(&dir)?;
    let mut env = make_env(&config.env)?;
    let mut state = match resume {
        Some(c) => {
            if c.seed != seed {
                return Err(CheckpointError::Mismatch(format!("seed {} vs {seed}", c.seed)).into());
            }
            RunState::from_checkpoint(config, c)?
        }
        None => RunState::new(config, seed),
    };

    let m_path = metrics_path(&dir, seed);
    let mut metrics = open_out(&m_path)?;
    writeln!(metrics, "{CSV_HEADER}").map_err(io_err(&m_path))?;
    let t_path = trace_path(&dir, seed);
    let mut trace = if config.output.trace {
        Some(open_out(&t_path)?)
    } else {
        None
    };
    let e_path = events_path(&dir, seed);
    let mut events = if config.output.event_log {
        Some(open_out(&e_path)?)
    } else {
        None
    };
    let capture = Capture {
        trace: trace.is_some(),
        events: events.is_some(),
    };
    let c_path = checkpoint_path(&dir, seed);
    let start = Instant::now();
    let wall = |start: &Instant| {
        if config.output.record_wall_clock {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };

    let mut summary = RunSummary {
        seed,
        algo: config.algo,
        eval_returns: Vec::new(),
        ask_used: Vec::new(),
        give_used: Vec::new(),
        metrics_path: m_path.clone(),
        checkpoint_path: c_path.clone(),
    };

    while state.episode < config.episodes {
        let episode = state.episode + 1;
        let report = train_episode(env.as_mut(), &mut state, config, episode, capture)?;
        state.episode = episode;
        let record = MetricsRecord {
            seed,
            episode,
            phase: Phase::Train,
            team_return: report.team_return,
            agent_returns: report.agent_returns,
            ask_used: state.ask_used(),
            give_used: state.give_used(),
            wall_ms: wall(&start),
        };
        writeln!(metrics, "{}", record.to_csv_row()).map_err(io_err(&m_path))?;
        if let Some(w) = trace.as_mut() {
            for t in &report.trace {
                let line = serde_json::to_string(t).expect("trace records serialize");
                writeln!(w, "{line}").map_err(io_err(&t_path))?;
            }
        }
        if let Some(w) = events.as_mut() {
            for e in &report.events {
                let line = serde_json::to_string(e).expect("event records serialize");
                writeln!(w, "{line}").map_err(io_err(&e_path))?;
            }
        }
        if episode % config.eval.interval == 0 {
            let (team, per_agent) = evaluate(env.as_mut(), &state, config.eval.episodes)?;
            summary.eval_returns.push((episode, team));
            let record = MetricsRecord {
                seed,
                episode,
                phase: Phase::Eval,
                team_return: team,
                agent_returns: per_agent,
                ask_used: state.ask_used(),
                give_used: state.give_used(),
                wall_ms: wall(&start),
            };
            writeln!(metrics, "{}", record.to_csv_row()).map_err(io_err(&m_path))?;
        }
        if config.output.checkpoint_every > 0 && episode % config.output.checkpoint_every == 0 {
            state.to_checkpoint(config).save(&c_path)?;
        }
    }
    metrics.flush().map_err(io_err(&m_path))?;
    if let Some(mut w) = trace {
        w.flush().map_err(io_err(&t_path))?;
    }
    if let Some(mut w) = events {
        w.flush().map_err(io_err(&e_path))?;
    }
    state.to_checkpoint(config).save(&c_path)?;
    summary.ask_used = state.ask_used();
    summary.give_used = state.give_used();
    Ok(summary)
}
