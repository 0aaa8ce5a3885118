//! Parallel runs over seeds or algorithms, with a summary table.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{Algorithm, ExperimentConfig};
use crate::harness::{prepare_output_dir, train_seed, HarnessError, RunSummary};

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// One run group per algorithm, each over all configured seeds, written
    /// to `<dir>/<algo>/`.
    Algorithms(Vec<Algorithm>),
    /// One run per seed with the configured algorithm, written to `<dir>/`.
    Seeds(Vec<u64>),
}

/// One run of a sweep and its result.
#[derive(Debug)]
pub struct RunOutcome {
    pub algo: Algorithm,
    pub seed: u64,
    pub result: Result<RunSummary, HarnessError>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub runs: Vec<RunOutcome>,
    pub summary_path: PathBuf,
}

impl SweepReport {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_ok())
    }
}

/// Build the per-run configs of a sweep. Every one is validated before any
/// run starts.
pub fn plan(
    base: &ExperimentConfig,
    axis: &SweepAxis,
) -> Result<Vec<(ExperimentConfig, u64)>, HarnessError> {
    let mut runs = Vec::new();
    match axis {
        SweepAxis::Algorithms(algos) => {
            for &algo in algos {
                let mut c = base.clone();
                c.algo = algo;
                c.output.dir = base.output.dir.join(algo.name());
                c.validate()?;
                runs.extend(c.seeds.clone().into_iter().map(|s| (c.clone(), s)));
            }
        }
        SweepAxis::Seeds(seeds) => {
            let mut c = base.clone();
            c.seeds = seeds.clone();
            c.validate()?;
            runs.extend(seeds.iter().map(|&s| (c.clone(), s)));
        }
    }
    Ok(runs)
}

/// Run `plan` on a pool of `jobs` threads. A failing run does not stop the
/// others.
pub fn run_all(runs: Vec<(ExperimentConfig, u64)>, jobs: usize) -> Vec<RunOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        runs.into_par_iter()
            .map(|(c, seed)| RunOutcome {
                algo: c.algo,
                seed,
                result: train_seed(&c, seed, None),
            })
            .collect()
    })
}

pub const SUMMARY_HEADER: &str =
    "group,algo,seeds,final_eval_return,ask_used,give_used,ask_ratio_vs_adhoctd,status";

struct Group {
    label: String,
    algo: Algorithm,
    seeds: usize,
    final_eval: Option<f64>,
    ask: Option<f64>,
    give: Option<f64>,
    ok: bool,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn group(label: String, algo: Algorithm, runs: &[&RunOutcome]) -> Group {
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let finals: Vec<f64> = ok.iter().filter_map(|s| s.final_eval_return()).collect();
    let asks: Vec<f64> = ok.iter().map(|s| s.total_ask_used() as f64).collect();
    let gives: Vec<f64> = ok
        .iter()
        .map(|s| s.give_used.iter().sum::<u64>() as f64)
        .collect();
    Group {
        label,
        algo,
        seeds: runs.len(),
        final_eval: mean(&finals),
        ask: mean(&asks),
        give: mean(&gives),
        ok: ok.len() == runs.len(),
    }
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Write `summary.csv`: one row per algorithm (algorithm axis) or per seed
/// (seed axis). Ask usage is the total over agents, averaged over seeds.
pub fn write_summary(
    path: &Path,
    axis: &SweepAxis,
    runs: &[RunOutcome],
) -> Result<(), HarnessError> {
    let groups: Vec<Group> = match axis {
        SweepAxis::Algorithms(algos) => algos
            .iter()
            .map(|&a| {
                let members: Vec<&RunOutcome> = runs.iter().filter(|r| r.algo == a).collect();
                group(a.name().to_string(), a, &members)
            })
            .collect(),
        SweepAxis::Seeds(seeds) => seeds
            .iter()
            .map(|&s| {
                let members: Vec<&RunOutcome> = runs.iter().filter(|r| r.seed == s).collect();
                let algo = members.first().map(|r| r.algo).unwrap_or(Algorithm::Cons);
                group(format!("seed{s}"), algo, &members)
            })
            .collect(),
    };
    let reference = match axis {
        SweepAxis::Algorithms(_) => groups
            .iter()
            .find(|g| g.algo == Algorithm::AdHocTd)
            .and_then(|g| g.ask)
            .filter(|&a| a > 0.0),
        SweepAxis::Seeds(_) => None,
    };
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "{SUMMARY_HEADER}").map_err(io)?;
    for g in &groups {
        let ratio = match (g.ask, reference) {
            (Some(a), Some(r)) => Some(a / r),
            _ => None,
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            g.label,
            g.algo,
            g.seeds,
            cell(g.final_eval),
            cell(g.ask),
            cell(g.give),
            cell(ratio),
            if g.ok { "ok" } else { "failed" }
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Validate, run every (algorithm, seed) pair in parallel and write the
/// summary to `<dir>/summary.csv`.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &SweepAxis,
    jobs: usize,
) -> Result<SweepReport, HarnessError> {
    let runs = plan(base, axis)?;
    prepare_output_dir(&base.output.dir)?;
    let outcomes = run_all(runs, jobs);
    let summary_path = base.output.dir.join("summary.csv");
    write_summary(&summary_path, axis, &outcomes)?;
    Ok(SweepReport {
        runs: outcomes,
        summary_path,
    })
}
