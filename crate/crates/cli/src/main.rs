//! Command-line front end for the benchmark runner.

mod selfcheck;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mme_core::acquisition::Criterion;
use mme_core::experiment::{run_batch_with, write_outputs, ExperimentConfig};
use mme_core::minimizer::CovMode;
use mme_core::testbed::{ground_truth, Objective};

#[derive(Parser)]
#[command(name = "mme", version, about = "Minimizer-entropy Bayesian optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of repetitions and write JSONL, CSV and manifest files.
    Run(RunArgs),
    /// Print reference minimizers and minima of an objective.
    OracleCheck {
        #[arg(long)]
        objective: Objective,
        /// Grid shape such as 15x15; the objective's reference grid by default.
        #[arg(long)]
        grid: Option<Shape>,
    },
    /// Check predictions, evidence gradients and the proxy bound against
    /// independent reference computations.
    Selfcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    criterion: Option<Criterion>,
    /// Grid shape such as 15x15 or 121.
    #[arg(long)]
    grid: Option<Shape>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    cov_mode: Option<CovMode>,
    #[arg(long)]
    refit_every: Option<usize>,
    #[arg(long)]
    fit_restarts: Option<usize>,
    /// Seed of the first repetition; repetition r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Record wall-clock time per iteration (outputs are then not byte-reproducible).
    #[arg(long)]
    timing: bool,
    /// Run repetitions on one thread.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Per-axis grid counts written as `15x15`.
#[derive(Debug, Clone)]
struct Shape(Vec<usize>);

impl FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(['x', 'X'])
            .map(|p| match p.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("invalid grid {s:?}, expected counts like 15x15")),
                Ok(n) => Ok(n),
            })
            .collect::<Result<_, _>>()
            .map(Shape)
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.objective {
            cfg.objective = v;
        }
        if let Some(v) = self.criterion {
            cfg.acquisition.criterion = v;
        }
        if let Some(v) = &self.grid {
            cfg.grid_shape = Some(v.0.clone());
        }
        if let Some(v) = self.noise_std {
            cfg.noise_std = v;
        }
        if let Some(v) = self.n_init {
            cfg.n_init = Some(v);
        }
        if let Some(v) = self.n_iter {
            cfg.n_iter = v;
        }
        if let Some(v) = self.reps {
            cfg.repetitions = v;
        }
        if let Some(v) = self.mc_samples {
            cfg.acquisition.mc_samples = v;
        }
        if let Some(v) = self.epsilon {
            cfg.acquisition.epsilon = v;
        }
        if let Some(v) = self.cov_mode {
            cfg.acquisition.cov_mode = v;
        }
        if let Some(v) = self.refit_every {
            cfg.refit_every = v;
        }
        if let Some(v) = self.fit_restarts {
            cfg.fit_restarts = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if self.timing {
            cfg.record_timing = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let outcome = run_batch_with(&cfg, !args.serial)?;
    let paths = write_outputs(&cfg, &outcome, &args.out)?;
    let s = &outcome.summary;
    println!(
        "{} / {}: {} of {} runs completed, grid minimum {:.6}",
        s.objective, s.criterion, s.completed, cfg.repetitions, s.grid_minimum
    );
    if let Some(last) = s.iterations.last() {
        println!(
            "iteration {}: median entropy {:.4}, median kl {:.4}, median fmin {:.6}",
            last.iteration, last.median_entropy, last.median_kl, last.median_fmin
        );
    }
    if s.grid_minimizers.len() > 1 {
        println!("runs recovering every grid minimizer: {}", s.all_recovered_count);
    }
    for f in &s.failures {
        eprintln!("run {} (seed {}) failed: {}", f.run, f.seed, f.message);
    }
    println!("wrote {}", paths.manifest.parent().unwrap_or(&args.out).display());
    if s.completed == 0 {
        bail!("every run failed");
    }
    Ok(())
}

fn oracle_check(objective: Objective, grid: Option<Shape>) -> Result<()> {
    let mut cfg = ExperimentConfig::new(objective, Criterion::Mme);
    cfg.grid_shape = grid.map(|g| g.0);
    let grid = cfg.grid()?;
    let truth = ground_truth(objective, &grid)?;
    println!("{objective} on {:?} grid", grid.shape());
    println!("global minimum {:.6}", truth.global_minimum);
    for p in &truth.global_minimizers {
        println!("  global minimizer {}", fmt_point(p));
    }
    for m in &truth.local_minima {
        println!("  local minimum {:.6} at {}", m.value, fmt_point(&m.point));
    }
    println!("grid minimum {:.6}", truth.grid_minimum);
    for &i in &truth.grid_minimizers {
        println!("  grid minimizer {i} at {}", fmt_point(grid.point(i)));
    }
    Ok(())
}

fn fmt_point(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(args) => run(args),
        Command::OracleCheck { objective, grid } => oracle_check(objective, grid),
        Command::Selfcheck { seed } => selfcheck::run(seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
