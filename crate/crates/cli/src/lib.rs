//! The `ciql` command line: data generation, scoring, training, evaluation,
//! analysis and the teleoperation server over one resolved [`RunConfig`].

pub mod commands;
pub mod config;
pub mod layout;
pub mod serve;

use std::path::PathBuf;

use ciql_core::{Category, Mode};
use clap::{Args, Parser, Subcommand};

use crate::commands::GenDemos;
use crate::config::{parse_degrees, parse_modes, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ciql",
    version,
    about = "Learning from imperfect demonstrations with confidence-weighted inverse soft-Q"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (config key `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training / generation seed (config key `train.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scripted demonstrations (the configured mix unless flags are given).
    GenDemos {
        /// Probability of a random action per step.
        #[arg(long)]
        noise_p: Option<f64>,
        /// Number of trajectories.
        #[arg(long)]
        n: Option<usize>,
        /// Keep only trajectories of this category (better, worse, failed).
        #[arg(long, value_parser = parse_category)]
        category: Option<Category>,
    },
    /// Score every transition by its approach angle.
    Score {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        confidence: ConfidenceArgs,
    },
    /// Drop transitions with zero confidence from a scored dataset.
    Filter {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a Q-function; writes checkpoints and the training log.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        confidence: ConfidenceArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint's success rate.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Correlate demonstration length with the return under the recovered reward.
    Align {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate every (angle, mode, seed) cell.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Noise angles in degrees, e.g. `10,40,180`.
        #[arg(long)]
        angles: Option<String>,
        /// Modes, e.g. `ciql-a,iq-filter,iq`.
        #[arg(long)]
        modes: Option<String>,
        /// Number of training seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Serve the teleoperation endpoints and static assets.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Dataset name that uploads are appended to.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run the tabular verification suite and print PASS/FAIL per check.
    Oracle,
}

#[derive(Debug, Args)]
pub struct ConfidenceArgs {
    /// Noise angle in degrees.
    #[arg(long)]
    pub theta_n: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub keypoint_confidence: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// iq, iq-filter, ciql-e or ciql-a.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Episodes per evaluation seed.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub eval_seeds: Option<usize>,
    /// sample or greedy.
    #[arg(long)]
    pub policy: Option<String>,
}

fn parse_category(s: &str) -> Result<Category, String> {
    match s.to_ascii_lowercase().as_str() {
        "better" => Ok(Category::Better),
        "worse" => Ok(Category::Worse),
        "failed" => Ok(Category::Failed),
        _ => Err(format!("unknown category `{s}` (better, worse, failed)")),
    }
}

impl ConfidenceArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.theta_n {
            c.confidence.theta_n_deg = v;
        }
        if let Some(v) = self.epsilon {
            c.confidence.epsilon = v;
        }
        if let Some(v) = self.keypoint_confidence {
            c.confidence.keypoint_confidence = v;
        }
    }
}

impl EvalArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(v) = self.episodes {
            c.train.eval_episodes = v;
        }
        if let Some(v) = self.eval_seeds {
            c.train.eval_seeds = v;
        }
        if let Some(p) = &self.policy {
            c.train.eval_policy = commands::eval_policy_from_str(p)?;
        }
        Ok(())
    }
}

impl TrainArgs {
    fn apply(&self, c: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(m) = &self.mode {
            c.train.objective.mode = m
                .parse::<Mode>()
                .map_err(|_| ConfigError::new("train.objective.mode", format!("unknown mode `{m}`")))?;
        }
        if let Some(v) = self.steps {
            c.train.total_steps = v;
        }
        if let Some(v) = self.lr {
            c.train.lr = v;
        }
        if let Some(v) = self.eval_interval {
            c.train.eval_interval = v;
        }
        self.eval.apply(c)
    }
}

/// Loads the config file, applies the global and subcommand flags and
/// validates the result.
pub fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        c.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        c.train.seed = seed;
    }
    match &cli.command {
        Command::Score { confidence, .. } => confidence.apply(&mut c),
        Command::Train { confidence, train, .. } => {
            confidence.apply(&mut c);
            train.apply(&mut c)?;
        }
        Command::Eval { eval, .. } => eval.apply(&mut c)?,
        Command::Sweep {
            angles,
            modes,
            seeds,
            train,
            ..
        } => {
            if let Some(a) = angles {
                c.sweep.angles_deg = parse_degrees("sweep.angles_deg", a)?;
            }
            if let Some(m) = modes {
                c.sweep.modes = parse_modes("sweep.modes", m)?;
            }
            if let Some(s) = seeds {
                c.sweep.seeds = *s;
            }
            train.apply(&mut c)?;
        }
        Command::Serve {
            host,
            port,
            static_dir,
            dataset,
        } => {
            if let Some(h) = host {
                c.serve.host = h.clone();
            }
            if let Some(p) = port {
                c.serve.port = *p;
            }
            if let Some(d) = static_dir {
                c.serve.static_dir = Some(d.clone());
            }
            if let Some(d) = dataset {
                c.serve.dataset = d.clone();
            }
        }
        Command::GenDemos { .. } | Command::Filter { .. } | Command::Align { .. } | Command::Oracle => {}
    }
    c.resolve()
}

pub fn execute(cli: Cli, config: &RunConfig) -> anyhow::Result<i32> {
    match cli.command {
        Command::GenDemos { noise_p, n, category } => {
            commands::gen_demos(
                config,
                GenDemos {
                    noise_p,
                    n,
                    seed: cli.seed,
                    category,
                },
            )?;
        }
        Command::Score { data, .. } => {
            commands::score(config, data)?;
        }
        Command::Filter { data } => {
            commands::filter(config, data)?;
        }
        Command::Train { data, .. } => {
            commands::train(config, data)?;
        }
        Command::Eval { checkpoint, .. } => {
            commands::eval(config, checkpoint)?;
        }
        Command::Align { checkpoint, data } => {
            commands::align(config, checkpoint, data)?;
        }
        Command::Sweep { data, .. } => {
            commands::sweep(config, data)?;
        }
        Command::Serve { .. } => serve::serve(config)?,
        Command::Oracle => {
            if !commands::oracle(config)? {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let config = e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<ciql_core::Error>(),
                Some(ciql_core::Error::Config { .. })
            )
    });
    if config {
        2
    } else {
        1
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

pub fn run(cli: Cli) -> i32 {
    let config = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(cli, &config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}
