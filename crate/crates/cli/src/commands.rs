use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ciql_core::analysis::{self, SweepTable};
use ciql_core::confidence::{filter_noise, score_dataset};
use ciql_core::env::generate_dataset;
use ciql_core::io::{load_dataset, load_scored, save_dataset, save_scored};
use ciql_core::qfunc::{load_checkpoint, save_checkpoint};
use ciql_core::trainer::{self, EvalRecord, Observer};
use ciql_core::{oracle, Category, Dataset, DemonstratorSpec, EvalPolicy, Mode, QModel};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::layout::{self, Layout};

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())),
        None => Ok(()),
    }
}

/// Writes the resolved configuration next to the outputs of `command`.
pub fn echo_config(config: &RunConfig, command: &str) -> Result<Layout> {
    let out = Layout::new(&config.out_dir);
    write(&out.config_echo(command), &config.to_toml())?;
    Ok(out)
}

fn input_or(out: &Layout, given: Option<PathBuf>, default: &str) -> PathBuf {
    given.unwrap_or_else(|| out.path(default))
}

fn load_matching(config: &RunConfig, path: &Path) -> Result<Dataset> {
    let data = load_dataset(path)?;
    if data.env != config.env {
        return Err(ConfigError::new(
            "env",
            format!(
                "{} was recorded in a different environment than the configured one",
                path.display()
            ),
        )
        .into());
    }
    Ok(data)
}

pub struct GenDemos {
    pub noise_p: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub category: Option<Category>,
}

pub fn gen_demos(config: &RunConfig, args: GenDemos) -> Result<PathBuf> {
    let out = echo_config(config, "gen-demos")?;
    let specs = if args.noise_p.is_some() || args.n.is_some() || args.category.is_some() {
        let spec = DemonstratorSpec {
            noise_p: args.noise_p.unwrap_or(0.05),
            seed: args.seed.unwrap_or(config.train.seed),
            n_trajectories: args.n.unwrap_or(30),
            category_target: args.category,
        };
        spec.validate().map_err(ConfigError::from)?;
        vec![spec]
    } else {
        config.demos.clone()
    };
    let data = generate_dataset(&config.env, &specs)?;
    let path = out.path(layout::DATASET);
    ensure_parent(&path)?;
    save_dataset(&data, &path)?;
    let count = |c| data.trajectories.iter().filter(|t| t.category == c).count();
    println!(
        "wrote {} trajectories ({} transitions; better {}, worse {}, failed {}) to {}",
        data.trajectories.len(),
        data.transition_count(),
        count(Category::Better),
        count(Category::Worse),
        count(Category::Failed),
        path.display()
    );
    Ok(path)
}

pub fn score(config: &RunConfig, data: Option<PathBuf>) -> Result<PathBuf> {
    let out = echo_config(config, "score")?;
    let dataset = load_matching(config, &input_or(&out, data, layout::DATASET))?;
    let conf = config.train.confidence(&config.env).map_err(ConfigError::from)?;
    let scored = score_dataset(&dataset, &conf);
    let path = out.path(layout::SCORED);
    save_scored(&scored, &path)?;
    println!(
        "alpha {} over {} transitions; wrote {}",
        scored.alpha,
        dataset.transition_count(),
        path.display()
    );
    Ok(path)
}

pub fn filter(config: &RunConfig, data: Option<PathBuf>) -> Result<PathBuf> {
    let out = echo_config(config, "filter")?;
    let scored = load_scored(&input_or(&out, data, layout::SCORED))?;
    let kept = filter_noise(&scored);
    let path = out.path(layout::FILTERED);
    save_dataset(&kept, &path)?;
    println!(
        "kept {} of {} transitions in {} fragments; wrote {}",
        kept.transition_count(),
        scored.dataset.transition_count(),
        kept.trajectories.len(),
        path.display()
    );
    Ok(path)
}

struct Checkpointer<'a> {
    out: &'a Layout,
    last: Option<PathBuf>,
}

impl Observer for Checkpointer<'_> {
    fn on_eval(&mut self, record: &EvalRecord, model: &QModel) -> ciql_core::Result<()> {
        let path = self.out.checkpoint(record.step);
        save_checkpoint(model, &path)?;
        println!(
            "step {:>7}  objective {:>10.4}  success {:.3} ± {:.3}  stage {:.3}",
            record.step, record.objective, record.success_mean, record.success_sd, record.stage_mean
        );
        self.last = Some(path);
        Ok(())
    }
}

pub fn train(config: &RunConfig, data: Option<PathBuf>) -> Result<PathBuf> {
    let out = echo_config(config, "train")?;
    let dataset = load_matching(config, &input_or(&out, data, layout::DATASET))?;
    fs::create_dir_all(out.path("checkpoints"))?;
    let mut observer = Checkpointer { out: &out, last: None };
    let (model, mut log) = trainer::train_with_observer(&dataset, &config.train, &config.env, &mut observer)?;
    let final_path = out.path(layout::FINAL_CHECKPOINT);
    save_checkpoint(&model, &final_path)?;
    log.checkpoint = Some(final_path.display().to_string());
    write(&out.path(layout::TRAIN_LOG), &log.to_csv())?;
    println!(
        "{} training done; checkpoint {}",
        config.train.objective.mode,
        final_path.display()
    );
    Ok(final_path)
}

pub fn eval(config: &RunConfig, checkpoint: Option<PathBuf>) -> Result<serde_json::Value> {
    let out = echo_config(config, "eval")?;
    let path = input_or(&out, checkpoint, layout::FINAL_CHECKPOINT);
    let model = load_checkpoint(&path)?;
    if model.action_count() != config.env.action_count() {
        return Err(ConfigError::new("env", "checkpoint action count does not match the environment").into());
    }
    let t = &config.train;
    let s = trainer::evaluate(&model, &config.env, t.eval_episodes, &t.eval_seed_list(), t.eval_policy);
    let report = json!({
        "checkpoint": path.display().to_string(),
        "episodes_per_seed": t.eval_episodes,
        "seeds": t.eval_seed_list(),
        "policy": t.eval_policy,
        "success_mean": s.mean,
        "success_sd": s.sd,
        "per_seed": s.per_seed,
        "mean_length": s.mean_length,
        "stage_mean": s.stage_mean,
        "stage_sd": s.stage_sd,
    });
    write(&out.path(layout::EVAL_REPORT), &format!("{report:#}\n"))?;
    println!(
        "success {} ± {} (stage {}, mean length {:.1})",
        s.mean, s.sd, s.stage_mean, s.mean_length
    );
    Ok(report)
}

pub fn align(config: &RunConfig, checkpoint: Option<PathBuf>, data: Option<PathBuf>) -> Result<f64> {
    let out = echo_config(config, "align")?;
    let model = load_checkpoint(&input_or(&out, checkpoint, layout::FINAL_CHECKPOINT))?;
    let dataset = load_matching(config, &input_or(&out, data, layout::DATASET))?;
    let report = analysis::alignment_test(&model, &dataset, config.train.objective.gamma)?;
    let path = out.path(layout::ALIGNMENT_REPORT);
    write(&path, &report.to_csv())?;
    println!(
        "pearson(length, return) {} over {} trajectories; wrote {}",
        report.pearson,
        report.rows.len(),
        path.display()
    );
    Ok(report.pearson)
}

pub fn sweep(config: &RunConfig, data: Option<PathBuf>) -> Result<SweepTable> {
    let out = echo_config(config, "sweep")?;
    let dataset = load_matching(config, &input_or(&out, data, layout::DATASET))?;
    let angles: Vec<f64> = config.sweep.angles_deg.iter().map(|d| d.to_radians()).collect();
    let seeds: Vec<u64> = (0..config.sweep.seeds as u64).collect();
    let table = analysis::sweep_noise_angle(
        &angles,
        &config.sweep.modes,
        &seeds,
        &config.train,
        &dataset,
        &config.env,
    )?;
    write(&out.path(layout::SWEEP_REPORT), &table.to_csv())?;
    write(&out.path(layout::SWEEP_PLOT), &table.plot_data())?;
    for (angle, mode, values) in table.grouped() {
        let (m, sd) = trainer::mean_sd(&values);
        println!("{angle:>6}°  {:<9}  success {m:.3} ± {sd:.3}", mode.name());
    }
    Ok(table)
}

/// Tabular verification suite; returns whether every check passed.
pub fn oracle(config: &RunConfig) -> Result<bool> {
    let out = echo_config(config, "oracle")?;
    let mut lines = Vec::new();
    let mut all = true;
    let mut report = |name: &str, pass: bool, detail: String| {
        all &= pass;
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        lines.push(line);
    };

    let err = oracle::round_trip_suite(50, 25, 4, 0.95, config.train.seed);
    report(
        "soft-Bellman round trip",
        err < 1e-6,
        format!("max error {err:.2e} on 50 MDPs"),
    );

    for mode in [Mode::Iq, Mode::CiqlA, Mode::CiqlE] {
        let s = oracle::stationarity_check(mode, 0.9, 20_000, 0.01);
        report(
            &format!("stationarity ({mode})"),
            s.max_error < 0.05,
            format!("max residual {:.2e} on {} pairs", s.max_error, s.pairs_checked),
        );
    }

    let gap = oracle::reduction_suite(100, config.train.seed);
    report(
        "objective reductions",
        gap <= 1e-10,
        format!("max relative gap {gap:.2e}"),
    );

    write(&out.path(layout::ORACLE_REPORT), &(lines.join("\n") + "\n"))?;
    Ok(all)
}

pub fn eval_policy_from_str(s: &str) -> Result<EvalPolicy, ConfigError> {
    match s {
        "sample" => Ok(EvalPolicy::Sample),
        "greedy" => Ok(EvalPolicy::Greedy),
        other => Err(ConfigError::new(
            "train.eval_policy",
            format!("unknown policy `{other}`"),
        )),
    }
}
