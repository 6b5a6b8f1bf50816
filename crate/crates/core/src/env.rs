//! Deterministic planar reach (and optional grasp) environment with a
//! discrete compass action set, plus scripted noisy demonstrators.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::types::{categorize, Category, CategoryThresholds, Dataset, Source, State, Trajectory, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StartDistribution {
    Fixed { x: f64, y: f64 },
    Uniform,
}

/// The arena is the square `[-arena/2, arena/2]²` centered on the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub arena: f64,
    pub step_size: f64,
    pub n_directions: usize,
    pub goal_radius: f64,
    pub max_steps: usize,
    pub two_stage: bool,
    pub start: StartDistribution,
    pub target: [f64; 2],
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            arena: 1.0,
            step_size: 0.05,
            n_directions: 8,
            goal_radius: 0.1,
            max_steps: 100,
            two_stage: false,
            start: StartDistribution::Fixed { x: -0.4, y: -0.4 },
            target: [0.4, 0.4],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arena.is_finite() && self.arena > 0.0) {
            return Err(Error::config("env.arena", "must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size < self.goal_radius) {
            return Err(Error::config(
                "env.step_size",
                "must satisfy 0 < step_size < goal_radius",
            ));
        }
        if self.goal_radius >= self.arena {
            return Err(Error::config("env.goal_radius", "must be smaller than the arena"));
        }
        if self.n_directions < 4 {
            return Err(Error::config("env.n_directions", "at least 4 directions required"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps", "must be positive"));
        }
        if !self.contains(self.target) {
            return Err(Error::config("env.target", "must lie inside the arena"));
        }
        if let StartDistribution::Fixed { x, y } = self.start {
            if !self.contains([x, y]) {
                return Err(Error::config("env.start", "fixed start must lie inside the arena"));
            }
        }
        Ok(())
    }

    pub fn half_extent(&self) -> f64 {
        self.arena / 2.0
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let h = self.half_extent();
        p.iter().all(|v| v.is_finite() && (-h..=h).contains(v))
    }

    pub fn action_count(&self) -> usize {
        self.n_directions + usize::from(self.two_stage)
    }

    pub fn grasp_action(&self) -> Option<usize> {
        self.two_stage.then_some(self.n_directions)
    }

    /// Unit vector of direction action `k`; components within 1e-12 of zero are
    /// snapped so that axis-aligned moves stay exactly on the axis.
    pub fn direction(&self, k: usize) -> [f64; 2] {
        let angle = 2.0 * PI * k as f64 / self.n_directions as f64;
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        [snap(angle.cos()), snap(angle.sin())]
    }

    pub fn distance_to_target(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.target[0]).hypot(p[1] - self.target[1])
    }

    /// Inside the goal disc, with slack for drift accumulated by repeated steps.
    pub fn in_goal(&self, p: [f64; 2]) -> bool {
        self.distance_to_target(p) <= self.goal_radius + GOAL_SLACK
    }

    pub fn thresholds(&self) -> CategoryThresholds {
        CategoryThresholds::scaled_to(self.max_steps)
    }

    fn translate(&self, p: [f64; 2], k: usize) -> [f64; 2] {
        let h = self.half_extent();
        let d = self.direction(k);
        [
            (p[0] + self.step_size * d[0]).clamp(-h, h),
            (p[1] + self.step_size * d[1]).clamp(-h, h),
        ]
    }
}

const GOAL_SLACK: f64 = 1e-9;

pub fn reset(config: &EnvConfig, seed: u64) -> State {
    match config.start {
        StartDistribution::Fixed { x, y } => State::new(x, y, false),
        StartDistribution::Uniform => {
            let mut rng = rng::seeded(seed);
            let h = config.half_extent();
            State::new(rng.random_range(-h..=h), rng.random_range(-h..=h), false)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: State,
    pub done: bool,
    pub success: bool,
}

pub fn step(state: &State, action: usize, config: &EnvConfig) -> Result<StepOutcome> {
    let action_count = config.action_count();
    if action >= action_count {
        return Err(Error::InvalidAction { action, action_count });
    }
    if Some(action) == config.grasp_action() {
        let success = config.in_goal(state.position());
        let next = if success { state.with_grasp(true) } else { *state };
        return Ok(StepOutcome {
            next,
            done: success,
            success,
        });
    }
    let p = config.translate(state.position(), action);
    let next = State::new(p[0], p[1], state.grasped());
    let success = !config.two_stage && config.in_goal(p);
    Ok(StepOutcome {
        next,
        done: success,
        success,
    })
}

/// Direction minimizing post-move distance to the target (lowest id on ties);
/// inside the goal region of a two-stage task the grasp action.
pub fn greedy_action(state: &State, config: &EnvConfig) -> usize {
    if let Some(grasp) = config.grasp_action() {
        if config.in_goal(state.position()) {
            return grasp;
        }
    }
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for k in 0..config.n_directions {
        let d = config.distance_to_target(config.translate(state.position(), k));
        if d < best_dist - 1e-12 {
            best = k;
            best_dist = d;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemonstratorSpec {
    /// Probability of a uniformly random action at each step.
    pub noise_p: f64,
    pub seed: u64,
    pub n_trajectories: usize,
    #[serde(default)]
    pub category_target: Option<Category>,
}

impl DemonstratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(Error::config("demos.noise_p", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The mixed demonstration set used by the experiments: 30 low-noise
/// successes, 30 medium-noise successes and 30 failures.
pub fn mixed_demonstrators() -> Vec<DemonstratorSpec> {
    [
        (0.05, 1, Category::Better),
        (0.5, 2, Category::Worse),
        (0.8, 3, Category::Failed),
    ]
    .into_iter()
    .map(|(noise_p, seed, category)| DemonstratorSpec {
        noise_p,
        seed,
        n_trajectories: 30,
        category_target: Some(category),
    })
    .collect()
}

/// Maximum number of episodes drawn per requested trajectory when rejection
/// sampling a target category.
pub const RETRY_BUDGET: usize = 2_000;

/// One episode of the epsilon-greedy scripted demonstrator seeded by `spec.seed`.
pub fn synth_demonstrate(config: &EnvConfig, spec: &DemonstratorSpec) -> Trajectory {
    synth_episode(config, spec.noise_p, spec.seed, format!("demo-{:016x}", spec.seed))
}

fn synth_episode(config: &EnvConfig, noise_p: f64, seed: u64, id: String) -> Trajectory {
    let mut rng = rng::seeded(seed);
    let action_count = config.action_count();
    let mut state = reset(config, derive_seed(seed, 0));
    let mut transitions = Vec::new();
    for _ in 0..config.max_steps {
        let action = if rng.random::<f64>() < noise_p {
            rng.random_range(0..action_count)
        } else {
            greedy_action(&state, config)
        };
        let out = step(&state, action, config).expect("demonstrator actions are in range");
        transitions.push(Transition {
            s: state,
            a: action,
            s_next: out.next,
            done: out.done,
            keypoint: Some(action) == config.grasp_action() && out.success,
        });
        state = out.next;
        if out.done {
            break;
        }
    }
    let mut traj = Trajectory {
        id,
        source: Source::Synthetic,
        category: Category::Uncategorized,
        parent: None,
        transitions,
    };
    traj.category = categorize(&traj, &config.thresholds());
    traj
}

pub fn generate_dataset(config: &EnvConfig, specs: &[DemonstratorSpec]) -> Result<Dataset> {
    config.validate()?;
    let mut trajectories = Vec::new();
    for (spec_idx, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let mut episode = 0u64;
        for _ in 0..spec.n_trajectories {
            let id = format!("traj-{:02}-{:04}", spec_idx, trajectories.len());
            let mut attempts = 0;
            let traj = loop {
                if attempts == RETRY_BUDGET {
                    return Err(Error::RetryBudget {
                        category: spec.category_target.unwrap_or(Category::Uncategorized),
                        attempts,
                    });
                }
                let t = synth_episode(config, spec.noise_p, derive_seed(spec.seed, episode), id.clone());
                episode += 1;
                attempts += 1;
                match spec.category_target {
                    Some(c) if c != t.category => continue,
                    _ => break t,
                }
            };
            trajectories.push(traj);
        }
    }
    Ok(Dataset::new(config.clone(), trajectories))
}
