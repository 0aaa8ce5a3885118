//! Command-line front end: `train`, `eval`, `sweep` and `validate-config`.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{Algorithm, ExperimentConfig};
use crate::envs::make_env;
use crate::harness::{evaluate, train_seed, RunState};
use crate::sweep::{plan, run_all, sweep, SweepAxis};

#[derive(Debug, Parser)]
#[command(
    name = "cons",
    version,
    about = "Knowledge sharing among independent Q-learners"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured seed and write metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint greedily.
    Eval(EvalArgs),
    /// Run a set of algorithms or seeds and write a summary table.
    Sweep(SweepArgs),
    /// Check a config file and print the resolved config.
    ValidateConfig(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run only these seeds (repeatable).
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    /// Training episodes per seed.
    #[arg(long)]
    pub episodes: Option<u64>,
    /// Write protocol messages to a JSONL trace.
    #[arg(long)]
    pub trace: bool,
    /// Extra `section.key=value` overrides.
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Continue from this checkpoint (requires exactly one seed).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Greedy episodes to average (default: eval.episodes).
    #[arg(long)]
    pub eval_episodes: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Comma-separated algorithms (default: cons and its ablations plus adhoctd).
    #[arg(long, value_delimiter = ',', conflicts_with = "sweep_seeds")]
    pub algos: Vec<Algorithm>,
    /// Comma-separated seeds to sweep with the configured algorithm.
    #[arg(long = "seeds", value_delimiter = ',')]
    pub sweep_seeds: Vec<u64>,
}

impl clap::ValueEnum for Algorithm {
    fn value_variants<'a>() -> &'a [Self] {
        &Algorithm::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Turn flags into overrides (flags win over positional overrides) and load.
pub fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if !args.seeds.is_empty() {
        let list: Vec<String> = args.seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    if let Some(out) = &args.out {
        overrides.push(format!("output.dir={}", quote(&out.to_string_lossy())));
    }
    if let Some(a) = args.algo {
        overrides.push(format!("algo={}", quote(a.name())));
    }
    if let Some(n) = args.episodes {
        overrides.push(format!("episodes={n}"));
    }
    if args.trace {
        overrides.push("output.trace=true".into());
    }
    Ok(ExperimentConfig::load(&args.config, &overrides)?)
}

pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::ValidateConfig(args) => {
            let c = resolve_config(&args)?;
            print!("{}", c.to_toml());
            Ok(true)
        }
        Command::Train(args) => {
            let c = resolve_config(&args.common)?;
            if let Some(path) = &args.resume {
                if c.seeds.len() != 1 {
                    bail!("--resume needs exactly one seed, got {}", c.seeds.len());
                }
                let ckpt = Checkpoint::load(path)
                    .with_context(|| format!("loading {}", path.display()))?;
                let s = train_seed(&c, c.seeds[0], Some(ckpt))?;
                report_run(c.algo, s.seed, Ok(&s));
                return Ok(true);
            }
            let runs = plan(&c, &SweepAxis::Seeds(c.seeds.clone()))?;
            let outcomes = run_all(runs, args.jobs);
            for o in &outcomes {
                report_run(o.algo, o.seed, o.result.as_ref().map_err(|e| e.to_string()));
            }
            Ok(outcomes.iter().all(|o| o.result.is_ok()))
        }
        Command::Eval(args) => {
            let c = resolve_config(&args.common)?;
            let ckpt = Checkpoint::load(&args.checkpoint)
                .with_context(|| format!("loading {}", args.checkpoint.display()))?;
            let state = RunState::from_checkpoint(&c, ckpt)?;
            let mut env = make_env(&c.env)?;
            let episodes = args.eval_episodes.unwrap_or(c.eval.episodes).max(1);
            let (team, per_agent) = evaluate(env.as_mut(), &state, episodes)?;
            let agents: Vec<String> = per_agent.iter().map(f64::to_string).collect();
            println!(
                "seed={} episode={} eval_episodes={episodes} team_return={team} agent_returns={}",
                state.seed,
                state.episode,
                agents.join(";")
            );
            Ok(true)
        }
        Command::Sweep(args) => {
            let c = resolve_config(&args.common)?;
            let axis = if !args.sweep_seeds.is_empty() {
                SweepAxis::Seeds(args.sweep_seeds.clone())
            } else if !args.algos.is_empty() {
                SweepAxis::Algorithms(args.algos.clone())
            } else {
                SweepAxis::Algorithms(Algorithm::ABLATION.to_vec())
            };
            let report = sweep(&c, &axis, args.jobs)?;
            for o in &report.runs {
                report_run(o.algo, o.seed, o.result.as_ref().map_err(|e| e.to_string()));
            }
            println!("summary: {}", report.summary_path.display());
            Ok(report.all_succeeded())
        }
    }
}

fn report_run(
    algo: Algorithm,
    seed: u64,
    result: std::result::Result<&crate::harness::RunSummary, String>,
) {
    match result {
        Ok(s) => println!(
            "{algo} seed={seed} final_eval={} ask_used={} metrics={}",
            s.final_eval_return()
                .map(|r| r.to_string())
                .unwrap_or_else(|| "-".into()),
            s.total_ask_used(),
            s.metrics_path.display()
        ),
        Err(e) => eprintln!("{algo} seed={seed} failed: {e}"),
    }
}

/// Entry point for the `cons` binary. Exit code 0 iff every run succeeded.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
