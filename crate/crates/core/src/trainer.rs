//! Training loop: score the demonstrations, sample expert and agent batches,
//! ascend the objective, roll out the softmax policy into a replay buffer and
//! evaluate on a fixed seed set.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{self, ConfidenceConfig};
use crate::env::{self, EnvConfig};
use crate::error::{Error, Result};
use crate::objectives::{self, Batch, ExpertSample, Mode, ObjectiveConfig, PolicyTerm};
use crate::qfunc::{apply_gradient, Grid, Optimizer, QModel, UpdateRule};
use crate::rng::{self, derive_seed};
use crate::types::{categorize, Category, Dataset, Source, State, Trajectory, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    /// One parameter per grid cell, grasp flag and action.
    Tabular {
        resolution: usize,
    },
    Dense {
        hidden: Vec<usize>,
    },
}

impl ModelSpec {
    pub fn build(&self, env: &EnvConfig, seed: u64) -> QModel {
        match self {
            ModelSpec::Tabular { resolution } => {
                QModel::tabular(Grid::new(*resolution, env.half_extent()), env.action_count())
            }
            ModelSpec::Dense { hidden } => QModel::dense(hidden, env.action_count(), env.half_extent(), seed),
        }
    }
}

/// How evaluation episodes choose actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPolicy {
    /// Sample from `softmax(Q)`.
    Sample,
    /// Highest Q, lowest id on ties.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    /// Noise angle in radians.
    pub theta_n: f64,
    pub epsilon: f64,
    pub keypoint_confidence: f64,
    pub model: ModelSpec,
    pub total_steps: usize,
    pub batch_size: usize,
    pub rollout_interval: usize,
    pub replay_capacity: usize,
    /// EMA rate of the copy used for `V(s')`; at 1 the online model is used
    /// directly and differentiated through.
    pub target_ema_tau: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_seeds: usize,
    pub eval_policy: EvalPolicy,
    pub warmup_episodes: usize,
    pub seed: u64,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveConfig::default(),
            theta_n: 60f64.to_radians(),
            epsilon: 0.05,
            keypoint_confidence: 1.5,
            model: ModelSpec::Tabular { resolution: 21 },
            total_steps: 50_000,
            batch_size: 256,
            rollout_interval: 20,
            replay_capacity: 100_000,
            target_ema_tau: 1.0,
            eval_interval: 2_000,
            eval_episodes: 100,
            eval_seeds: 5,
            eval_policy: EvalPolicy::Sample,
            warmup_episodes: 10,
            seed: 0,
            lr: 3e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.theta_n > 0.0 && self.theta_n <= PI + 1e-12) {
            return Err(Error::config("train.theta_n", "must lie in (0°, 180°]"));
        }
        let positive = [
            ("train.batch_size", self.batch_size),
            ("train.rollout_interval", self.rollout_interval),
            ("train.replay_capacity", self.replay_capacity),
            ("train.eval_interval", self.eval_interval),
            ("train.eval_episodes", self.eval_episodes),
            ("train.eval_seeds", self.eval_seeds),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::config("train.batch_size", "must not exceed replay_capacity"));
        }
        if !(self.target_ema_tau > 0.0 && self.target_ema_tau <= 1.0) {
            return Err(Error::config("train.target_ema_tau", "must lie in (0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        match &self.model {
            ModelSpec::Tabular { resolution: 0 } => {
                return Err(Error::config("train.model.resolution", "must be positive"))
            }
            ModelSpec::Dense { hidden } if hidden.contains(&0) => {
                return Err(Error::config("train.model.hidden", "layer widths must be positive"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn confidence(&self, env: &EnvConfig) -> Result<ConfidenceConfig> {
        ConfidenceConfig::new(self.theta_n, self.epsilon, self.keypoint_confidence, env.target)
    }

    /// Evaluation seeds; fixed across training seeds so runs are compared on
    /// the same episodes.
    pub fn eval_seed_list(&self) -> Vec<u64> {
        (0..self.eval_seeds as u64)
            .map(|i| derive_seed(EVAL_SEED_BASE, i))
            .collect()
    }
}

const EVAL_SEED_BASE: u64 = 0xe7a1_5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean objective value since the previous record.
    pub objective: f64,
    pub success_mean: f64,
    pub success_sd: f64,
    pub mean_length: f64,
    pub stage_mean: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
    pub checkpoint: Option<String>,
}

impl TrainLog {
    pub fn final_record(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,objective,success_mean,success_sd,mean_length,stage_mean,alpha\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.objective, r.success_mean, r.success_sd, r.mean_length, r.stage_mean, r.alpha
            );
        }
        out
    }
}

/// Hooks into the training loop; all methods default to no-ops.
pub trait Observer {
    fn on_step(&mut self, _step: usize, _objective: f64) {}
    fn on_eval(&mut self, _record: &EvalRecord, _model: &QModel) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// FIFO replay buffer of agent transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&self, rng: &mut rng::Rng, n: usize) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

fn sample_index(probs: &[f64], rng: &mut rng::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn greedy_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub success: bool,
    /// Some visited state lies in the goal region.
    pub reached_goal: bool,
}

/// Runs one episode from `reset(env, start_seed)`; `policy = None` acts
/// uniformly at random.
pub fn run_episode(
    model: Option<&QModel>,
    env: &EnvConfig,
    start_seed: u64,
    policy: EvalPolicy,
    rng: &mut rng::Rng,
    id: String,
) -> Episode {
    let n_actions = env.action_count();
    let mut q = vec![0.0; n_actions];
    let mut pi = vec![0.0; n_actions];
    let mut state = env::reset(env, start_seed);
    let mut transitions = Vec::new();
    let mut success = false;
    let mut reached_goal = env.in_goal(state.position());
    for _ in 0..env.max_steps {
        let a = match model {
            None => rng.random_range(0..n_actions),
            Some(m) => {
                m.q_values_into(&state, &mut q);
                match policy {
                    EvalPolicy::Sample => {
                        objectives::softmax_into(&q, &mut pi);
                        sample_index(&pi, rng)
                    }
                    EvalPolicy::Greedy => greedy_index(&q),
                }
            }
        };
        let out = env::step(&state, a, env).expect("policy actions are in range");
        transitions.push(Transition {
            s: state,
            a,
            s_next: out.next,
            done: out.done,
            keypoint: Some(a) == env.grasp_action() && out.success,
        });
        state = out.next;
        reached_goal |= env.in_goal(state.position());
        if out.done {
            success = out.success;
            break;
        }
    }
    let mut trajectory = Trajectory {
        id,
        source: Source::Synthetic,
        category: Category::Uncategorized,
        parent: None,
        transitions,
    };
    trajectory.category = categorize(&trajectory, &env.thresholds());
    Episode {
        trajectory,
        success,
        reached_goal,
    }
}

/// `n_episodes` episodes sampled from `softmax(Q)`.
pub fn rollout(model: &QModel, env: &EnvConfig, n_episodes: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = rng::seeded(seed);
    (0..n_episodes)
        .map(|i| {
            let start = derive_seed(seed, i as u64);
            run_episode(
                Some(model),
                env,
                start,
                EvalPolicy::Sample,
                &mut rng,
                format!("rollout-{i:04}"),
            )
            .trajectory
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub sd: f64,
    pub per_seed: Vec<f64>,
    pub mean_length: f64,
    /// Success among episodes that reached the goal region (the grasp stage
    /// of a two-stage task), mean and sd across seeds; seeds where no
    /// episode reached the goal count as 0.
    pub stage_mean: f64,
    pub stage_sd: f64,
}

/// Success fraction over `n_episodes` per seed, summarized across seeds.
pub fn evaluate(model: &QModel, env: &EnvConfig, n_episodes: usize, seeds: &[u64], policy: EvalPolicy) -> EvalSummary {
    assert!(!seeds.is_empty(), "evaluate needs at least one seed");
    let per: Vec<(f64, f64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = rng::seeded(seed);
            let mut successes = 0usize;
            let mut steps = 0usize;
            let mut reached = 0usize;
            for i in 0..n_episodes {
                let ep = run_episode(
                    Some(model),
                    env,
                    derive_seed(seed, i as u64),
                    policy,
                    &mut rng,
                    String::new(),
                );
                successes += ep.success as usize;
                steps += ep.trajectory.len();
                reached += ep.reached_goal as usize;
            }
            let n = n_episodes.max(1) as f64;
            let stage = if reached == 0 {
                0.0
            } else {
                successes as f64 / reached as f64
            };
            (successes as f64 / n, steps as f64 / n, stage)
        })
        .collect();
    let per_seed: Vec<f64> = per.iter().map(|p| p.0).collect();
    let (mean, sd) = mean_sd(&per_seed);
    let stages: Vec<f64> = per.iter().map(|p| p.2).collect();
    let (stage_mean, stage_sd) = mean_sd(&stages);
    EvalSummary {
        mean,
        sd,
        stage_mean,
        stage_sd,
        mean_length: per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64,
        per_seed,
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Expert transitions with their confidence scores (`None` for IQ modes),
/// and the prior α used by the objective.
pub struct PreparedData {
    pub samples: Vec<ExpertSample>,
    pub alpha: f64,
}

/// Applies the mode's data treatment: IQ uses the raw data, IQ_FILTER the
/// noise-filtered fragments, the confidence modes scored transitions.
pub fn prepare_expert_data(dataset: &Dataset, config: &TrainConfig) -> Result<PreparedData> {
    let mode = config.objective.mode;
    let (samples, alpha) = match mode {
        Mode::Iq => (
            dataset
                .transitions()
                .map(|t| ExpertSample {
                    transition: *t,
                    w: None,
                })
                .collect(),
            1.0,
        ),
        Mode::IqFilter => {
            let scored = confidence::score_dataset(dataset, &config.confidence(&dataset.env)?);
            let filtered = confidence::filter_noise(&scored);
            (
                filtered
                    .transitions()
                    .map(|t| ExpertSample {
                        transition: *t,
                        w: None,
                    })
                    .collect(),
                1.0,
            )
        }
        Mode::CiqlE | Mode::CiqlA => {
            let scored = confidence::score_dataset(dataset, &config.confidence(&dataset.env)?);
            let samples = scored
                .dataset
                .transitions()
                .zip(scored.flat_scores())
                .map(|(t, w)| ExpertSample {
                    transition: *t,
                    w: Some(w),
                })
                .collect();
            (samples, scored.alpha)
        }
    };
    let samples: Vec<ExpertSample> = samples;
    if samples.is_empty() {
        return Err(Error::Objective("no expert transitions left after filtering".into()));
    }
    if mode.uses_confidence() && alpha <= 0.0 {
        return Err(Error::Objective(
            "every demonstration transition scored as noise (alpha = 0)".into(),
        ));
    }
    Ok(PreparedData { samples, alpha })
}

pub fn train(dataset: &Dataset, config: &TrainConfig, env: &EnvConfig) -> Result<(QModel, TrainLog)> {
    train_with_observer(dataset, config, env, &mut ())
}

pub fn train_with_observer(
    dataset: &Dataset,
    config: &TrainConfig,
    env: &EnvConfig,
    observer: &mut dyn Observer,
) -> Result<(QModel, TrainLog)> {
    config.validate()?;
    env.validate()?;
    if &dataset.env != env {
        return Err(Error::config(
            "dataset.env",
            "dataset was recorded in a different environment",
        ));
    }
    dataset.validate()?;

    let mut model = config.model.build(env, derive_seed(config.seed, 1));
    let mut log = TrainLog::default();
    if config.total_steps == 0 {
        return Ok((model, log));
    }

    let data = prepare_expert_data(dataset, config)?;
    let obj_config = ObjectiveConfig {
        alpha: if config.objective.mode.uses_confidence() {
            data.alpha
        } else {
            config.objective.alpha
        },
        ..config.objective
    };

    let mut rng = rng::seeded(config.seed);
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    for _ in 0..config.warmup_episodes {
        let ep = run_episode(None, env, rng.random(), EvalPolicy::Sample, &mut rng, String::new());
        ep.trajectory.transitions.into_iter().for_each(|t| replay.push(t));
    }

    let mut target = model.clone();
    let mut opt = Optimizer::new(UpdateRule::adam(config.lr), model.param_count());
    let eval_seeds = config.eval_seed_list();
    let mut objective_acc = 0.0;
    let mut objective_count = 0usize;
    let needs_agent = config.objective.policy_term == PolicyTerm::Sample;

    for step in 1..=config.total_steps {
        let expert = (0..config.batch_size)
            .map(|_| data.samples[rng.random_range(0..data.samples.len())])
            .collect();
        let agent = if needs_agent {
            replay.sample(&mut rng, config.batch_size)
        } else {
            Vec::new()
        };
        let initial_states: Vec<State> = match config.objective.policy_term {
            PolicyTerm::V0 => (0..config.batch_size).map(|_| env::reset(env, rng.random())).collect(),
            PolicyTerm::Sample => Vec::new(),
        };
        let batch = Batch {
            expert,
            agent,
            initial_states,
        };
        let target_ref = if config.target_ema_tau < 1.0 {
            Some(&target)
        } else {
            None
        };
        let value = objectives::objective_with_target(&batch, &model, target_ref, &obj_config)?;
        apply_gradient(&mut model, &value.grad, &mut opt)
            .map_err(|e| Error::Objective(format!("training diverged at step {step}: {e}")))?;
        if config.target_ema_tau < 1.0 {
            target.blend_from(&model, config.target_ema_tau);
        }
        objective_acc += value.value;
        objective_count += 1;
        observer.on_step(step, value.value);

        if step % config.rollout_interval == 0 {
            let ep = run_episode(
                Some(&model),
                env,
                rng.random(),
                EvalPolicy::Sample,
                &mut rng,
                String::new(),
            );
            ep.trajectory.transitions.into_iter().for_each(|t| replay.push(t));
        }

        if step % config.eval_interval == 0 || step == config.total_steps {
            let summary = evaluate(&model, env, config.eval_episodes, &eval_seeds, config.eval_policy);
            let record = EvalRecord {
                step,
                objective: objective_acc / objective_count as f64,
                success_mean: summary.mean,
                success_sd: summary.sd,
                mean_length: summary.mean_length,
                stage_mean: summary.stage_mean,
                alpha: obj_config.alpha,
            };
            objective_acc = 0.0;
            objective_count = 0;
            observer.on_eval(&record, &model)?;
            log.records.push(record);
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StartDistribution;

    fn small_env() -> EnvConfig {
        EnvConfig {
            step_size: 0.25,
            n_directions: 4,
            goal_radius: 0.3,
            max_steps: 30,
            start: StartDistribution::Fixed { x: -0.5, y: -0.5 },
            target: [0.5, 0.5],
            ..EnvConfig::default()
        }
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(Transition {
                s: State::new(i as f64, 0.0, false),
                a: 0,
                s_next: State::new(0.0, 0.0, false),
                done: false,
                keypoint: false,
            });
            assert!(buf.len() <= 3);
        }
        let xs: Vec<f64> = buf.iter().map(|t| t.s.x()).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_model_rollouts_are_uniform() {
        let env = EnvConfig::default();
        let model = QModel::tabular(Grid::new(5, 0.5), env.action_count());
        let mut counts = vec![0usize; env.action_count()];
        let mut total = 0;
        let mut seed = 0;
        while total < 10_000 {
            for t in rollout(&model, &env, 10, seed) {
                for tr in &t.transitions {
                    counts[tr.a] += 1;
                    total += 1;
                }
            }
            seed += 1;
        }
        let expected = total as f64 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of χ² with 7 degrees of freedom.
        assert!(chi2 < 24.32, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn dominant_action_walks_straight() {
        let env = small_env();
        let mut model = QModel::tabular(Grid::new(5, 0.5), 4);
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            *p = if i % 4 == 0 { 50.0 } else { 0.0 };
        }
        let t = &rollout(&model, &env, 1, 3)[0];
        assert!(t.transitions.iter().all(|tr| tr.a == 0));
        assert!(rollout(&model, &env, 0, 3).is_empty());
    }

    #[test]
    fn evaluate_extremes() {
        let env = small_env();
        // East then north reaches the corner; the all-west policy never does.
        let mut good = QModel::tabular(Grid::new(5, 0.5), 4);
        let mut bad = good.clone();
        let grid = Grid::new(5, 0.5);
        for cell in 0..grid.cell_count() {
            let c = grid.center(cell);
            let a = if c.x() < 0.3 { 0 } else { 1 };
            good.params_mut()[cell * 4 + a] = 100.0;
            bad.params_mut()[cell * 4 + 2] = 100.0;
        }
        let seeds = [1, 2, 3];
        let s = evaluate(&good, &env, 20, &seeds, EvalPolicy::Sample);
        assert_eq!((s.mean, s.sd), (1.0, 0.0));
        let s = evaluate(&bad, &env, 20, &seeds, EvalPolicy::Sample);
        assert_eq!((s.mean, s.sd), (0.0, 0.0));
    }

    #[test]
    fn mean_sd_is_sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn config_validation_names_keys() {
        let mut c = TrainConfig {
            batch_size: 10,
            replay_capacity: 5,
            ..TrainConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("train.batch_size"), "{msg}");
        c.replay_capacity = 10;
        c.target_ema_tau = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("train.target_ema_tau"));
    }
}
