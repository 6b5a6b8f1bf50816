//! Exact dynamic-programming references on small tabular MDPs: soft value
//! iteration, discounted occupancies and the checks built on them
//! (soft-Bellman round trip, occupancy stationarity, objective reductions).
//!
//! These routines deliberately re-derive what they need (log-sum-exp,
//! softmax, flow equations) instead of calling into `objectives`.

use std::collections::HashMap;
use std::collections::VecDeque;

use rand::Rng as _;

use crate::confidence::{self, ConfidenceConfig};
use crate::env::{self, EnvConfig, StartDistribution};
use crate::objectives::{self, Batch, ExpertSample, Mode, ObjectiveConfig, PolicyTerm};
use crate::qfunc::{apply_gradient, Grid, Optimizer, QModel, UpdateRule};
use crate::rng;
use crate::types::{State, Transition};

/// Deterministic tabular MDP; `next[s·A + a]` is the successor of `(s, a)` and
/// `terminal[s·A + a]` marks steps that end the episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub next: Vec<usize>,
    pub terminal: Vec<bool>,
    pub initial: Vec<f64>,
}

impl TabularMdp {
    pub fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Random successor table with a fraction of terminal steps and a random
    /// initial distribution.
    pub fn random(n_states: usize, n_actions: usize, terminal_prob: f64, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let n = n_states * n_actions;
        let next = (0..n).map(|_| rng.random_range(0..n_states)).collect();
        let terminal = (0..n).map(|_| rng.random::<f64>() < terminal_prob).collect();
        let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.1).collect();
        let z: f64 = raw.iter().sum();
        TabularMdp {
            n_states,
            n_actions,
            next,
            terminal,
            initial: raw.into_iter().map(|v| v / z).collect(),
        }
    }
}

/// An environment restricted to the lattice reachable from its fixed start,
/// with each lattice point in its own grid cell.
#[derive(Clone, Debug)]
pub struct LatticeMdp {
    pub mdp: TabularMdp,
    pub states: Vec<State>,
    pub env: EnvConfig,
    pub grid: Grid,
}

impl LatticeMdp {
    /// Breadth-first enumeration from the start state. With `continuing`,
    /// successful steps are not terminal and the episode never ends.
    pub fn build(env: &EnvConfig, grid: Grid, continuing: bool) -> crate::Result<Self> {
        env.validate()?;
        let StartDistribution::Fixed { .. } = env.start else {
            return Err(crate::Error::config("env.start", "lattice MDPs need a fixed start"));
        };
        let start = env::reset(env, 0);
        let n_actions = env.action_count();
        let mut index: HashMap<usize, usize> = HashMap::new();
        let mut states = vec![start];
        index.insert(grid.cell(&start), 0);
        let mut queue = VecDeque::from([0usize]);
        let mut edges: Vec<Vec<(usize, bool)>> = vec![Vec::new()];
        while let Some(s) = queue.pop_front() {
            let state = states[s];
            let mut out = Vec::with_capacity(n_actions);
            for a in 0..n_actions {
                let step = env::step(&state, a, env)?;
                let cell = grid.cell(&step.next);
                let id = match index.get(&cell) {
                    Some(&id) => {
                        if states[id] != step.next {
                            return Err(crate::Error::config("grid", "two reachable states share a grid cell"));
                        }
                        id
                    }
                    None => {
                        let id = states.len();
                        states.push(step.next);
                        edges.push(Vec::new());
                        index.insert(cell, id);
                        queue.push_back(id);
                        id
                    }
                };
                out.push((id, step.done && !continuing));
            }
            edges[s] = out;
        }
        let n_states = states.len();
        let mut initial = vec![0.0; n_states];
        initial[0] = 1.0;
        let mdp = TabularMdp {
            n_states,
            n_actions,
            next: edges.iter().flatten().map(|e| e.0).collect(),
            terminal: edges.iter().flatten().map(|e| e.1).collect(),
            initial,
        };
        Ok(LatticeMdp {
            mdp,
            states,
            env: env.clone(),
            grid,
        })
    }

    pub fn transition(&self, s: usize, a: usize) -> Transition {
        let i = self.mdp.idx(s, a);
        Transition {
            s: self.states[s],
            a,
            s_next: self.states[self.mdp.next[i]],
            done: self.mdp.terminal[i],
            keypoint: false,
        }
    }
}

fn lse(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Solves `Q = r + γ·V(s')` with `V = logsumexp Q` by fixed-point iteration.
pub fn soft_value_iteration(mdp: &TabularMdp, reward: &[f64], gamma: f64, tol: f64) -> Vec<f64> {
    let a = mdp.n_actions;
    let mut q = vec![0.0; mdp.n_states * a];
    loop {
        let v: Vec<f64> = q.chunks_exact(a).map(lse).collect();
        let mut delta = 0.0f64;
        for i in 0..q.len() {
            let boot = if mdp.terminal[i] { 0.0 } else { gamma * v[mdp.next[i]] };
            let updated = reward[i] + boot;
            delta = delta.max((updated - q[i]).abs());
            q[i] = updated;
        }
        if delta < tol {
            return q;
        }
    }
}

/// Softmax policy of a Q table, row per state.
pub fn softmax_policy(mdp: &TabularMdp, q: &[f64]) -> Vec<f64> {
    q.chunks_exact(mdp.n_actions).flat_map(softmax).collect()
}

/// Discounted state-action occupancy `(1−γ)·Σ_t γ^t·P(s_t = s, a_t = a)` of a
/// stochastic policy. Mass stops at terminal steps, so it sums to 1 only for
/// continuing MDPs.
pub fn occupancy(mdp: &TabularMdp, policy: &[f64], gamma: f64) -> Vec<f64> {
    let a = mdp.n_actions;
    let mut d = mdp.initial.iter().map(|p| (1.0 - gamma) * p).collect::<Vec<_>>();
    let mut rho = vec![0.0; mdp.n_states * a];
    loop {
        let mut inflow = vec![0.0; mdp.n_states];
        for (i, r) in rho.iter_mut().enumerate() {
            *r = policy[i] * d[i / a];
            if !mdp.terminal[i] {
                inflow[mdp.next[i]] += *r;
            }
        }
        let mut delta = 0.0f64;
        for s in 0..mdp.n_states {
            let updated = (1.0 - gamma) * mdp.initial[s] + gamma * inflow[s];
            delta = delta.max((updated - d[s]).abs());
            d[s] = updated;
        }
        if delta < 1e-15 {
            for (i, r) in rho.iter_mut().enumerate() {
                *r = policy[i] * d[i / a];
            }
            return rho;
        }
    }
}

/// `r = T^π Q` through the public operators, then back to `Q` by soft value
/// iteration. Returns the largest absolute reconstruction error.
pub fn soft_bellman_round_trip(mdp: &TabularMdp, q: &[f64], gamma: f64) -> f64 {
    let a = mdp.n_actions;
    let v: Vec<f64> = q.chunks_exact(a).map(objectives::soft_value).collect();
    let r: Vec<f64> = (0..q.len())
        .map(|i| objectives::inverse_soft_bellman(q[i], v[mdp.next[i]], mdp.terminal[i], gamma))
        .collect();
    let solved = soft_value_iteration(mdp, &r, gamma, 1e-13);
    q.iter().zip(&solved).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct StationarityReport {
    /// Largest `|φ′(r) − ρπ/ρE|` over checked pairs.
    pub max_error: f64,
    pub pairs_checked: usize,
    pub objective: f64,
    pub iterations: usize,
}

/// Gridworld used for the stationarity check: a 5×5 lattice with spacing
/// 0.25, four directions and the target in a corner.
pub fn stationarity_env() -> EnvConfig {
    EnvConfig {
        arena: 1.0,
        step_size: 0.25,
        n_directions: 4,
        goal_radius: 0.3,
        max_steps: 50,
        two_stage: false,
        start: StartDistribution::Fixed { x: -0.5, y: -0.5 },
        target: [0.5, 0.5],
    }
}

/// Stochastic demonstrator with full support: softmax of `-beta` times the
/// post-move distance to the target.
pub fn soft_greedy_policy(lattice: &LatticeMdp, beta: f64) -> Vec<f64> {
    let mdp = &lattice.mdp;
    (0..mdp.n_states)
        .flat_map(|s| {
            let row: Vec<f64> = (0..mdp.n_actions)
                .map(|a| {
                    let next = lattice.states[mdp.next[mdp.idx(s, a)]];
                    -beta * lattice.env.distance_to_target(next.position())
                })
                .collect();
            softmax(&row)
        })
        .collect()
}

/// Exact-expectation objective `Σ ρE(s,a)·f(r, w) − c·(1−γ)·V(s₀)` on a
/// lattice, assembled from single-transition batches (the initial-state term
/// is shared and the weights sum to one). `w` is indexed like `rho_e`.
pub fn exact_objective(
    lattice: &LatticeMdp,
    rho_e: &[f64],
    w: Option<&[f64]>,
    model: &QModel,
    config: &ObjectiveConfig,
) -> (f64, Vec<f64>) {
    let start = lattice.states[0];
    let mut value = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    let total: f64 = rho_e.iter().sum();
    for s in 0..lattice.mdp.n_states {
        for a in 0..lattice.mdp.n_actions {
            let i = lattice.mdp.idx(s, a);
            let weight = rho_e[i] / total;
            if weight == 0.0 {
                continue;
            }
            let batch = Batch {
                expert: vec![ExpertSample {
                    transition: lattice.transition(s, a),
                    w: w.map(|w| w[i]),
                }],
                agent: Vec::new(),
                initial_states: vec![start],
            };
            let o = objectives::objective(&batch, model, config).expect("valid batch");
            value += weight * o.value;
            grad.iter_mut().zip(&o.grad).for_each(|(g, d)| *g += weight * d);
        }
    }
    (value, grad)
}

/// Trains a tabular model on the exact expert occupancy of a stochastic
/// demonstrator and checks the first-order condition of `mode`,
/// `ρE·∂f/∂r = c·ρπ`, as `|∂f/∂r / c − ρπ/ρE|` on pairs with
/// `ρE > min_rho_e` (and `w > 0` for CIQL-E, which leaves the others free).
/// Confidence modes score the lattice with a 60° noise angle.
pub fn stationarity_check(mode: Mode, gamma: f64, iterations: usize, min_rho_e: f64) -> StationarityReport {
    let env = stationarity_env();
    let grid = Grid::new(5, env.half_extent());
    let lattice = LatticeMdp::build(&env, grid, true).expect("valid lattice");
    let mdp = &lattice.mdp;
    let expert = soft_greedy_policy(&lattice, 8.0);
    let rho_e = occupancy(mdp, &expert, gamma);

    let w: Option<Vec<f64>> = mode.uses_confidence().then(|| {
        let c = ConfidenceConfig::new(60f64.to_radians(), 0.05, 1.5, env.target).expect("valid confidence");
        (0..mdp.n_states * mdp.n_actions)
            .map(|i| confidence::score_transition(&lattice.transition(i / mdp.n_actions, i % mdp.n_actions), &c))
            .collect()
    });
    let alpha = match &w {
        Some(w) => {
            let total: f64 = rho_e.iter().sum();
            rho_e.iter().zip(w).map(|(r, w)| r * w.clamp(0.0, 1.0)).sum::<f64>() / total
        }
        None => 1.0,
    };
    let config = ObjectiveConfig {
        mode,
        sigma: 0.5,
        gamma,
        policy_term: PolicyTerm::V0,
        alpha,
        mix_expert_in_policy_term: false,
    };
    let mut model = QModel::tabular(grid, mdp.n_actions);
    let mut opt = Optimizer::new(UpdateRule::adam(0.05), model.param_count());
    let mut objective = 0.0;
    for _ in 0..iterations {
        let (v, g) = exact_objective(&lattice, &rho_e, w.as_deref(), &model, &config);
        objective = v;
        apply_gradient(&mut model, &g, &mut opt).expect("finite gradient");
    }

    let q: Vec<f64> = (0..mdp.n_states)
        .flat_map(|s| model.q_values(&lattice.states[s]))
        .collect();
    let rho_pi = occupancy(mdp, &softmax_policy(mdp, &q), gamma);
    let coef = if mode == Mode::CiqlA { alpha } else { 1.0 };
    let mut max_error = 0.0f64;
    let mut pairs_checked = 0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let i = mdp.idx(s, a);
            let wi = w.as_ref().map_or(1.0, |w| w[i]);
            if rho_e[i] <= min_rho_e || (mode == Mode::CiqlE && wi == 0.0) {
                continue;
            }
            let r = objectives::recover_reward(&model, &[lattice.transition(s, a)], gamma)[0];
            let (_, df) = objectives::expert_term(mode, r, wi, alpha, config.sigma);
            let err = (df / coef - rho_pi[i] / rho_e[i]).abs();
            max_error = max_error.max(err);
            pairs_checked += 1;
        }
    }
    StationarityReport {
        max_error,
        pairs_checked,
        objective,
        iterations,
    }
}

/// Random tabular Q-functions on random MDPs; returns the worst round-trip
/// error over `instances`.
pub fn round_trip_suite(instances: usize, max_states: usize, n_actions: usize, gamma: f64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let inst_seed = rng::derive_seed(seed, k as u64);
        let mut r = rng::seeded(inst_seed);
        let n_states = r.random_range(2..=max_states);
        let mdp = TabularMdp::random(n_states, n_actions, 0.1, inst_seed);
        let q: Vec<f64> = (0..n_states * n_actions).map(|_| r.random_range(-5.0..5.0)).collect();
        worst = worst.max(soft_bellman_round_trip(&mdp, &q, gamma));
    }
    worst
}

/// Largest relative gap between the confidence objectives at `w ≡ 1, α = 1`
/// and the IQ objective over random batches on random models.
pub fn reduction_suite(batches: usize, seed: u64) -> f64 {
    let env = EnvConfig::default();
    let grid = Grid::new(7, env.half_extent());
    let mut worst = 0.0f64;
    for k in 0..batches {
        let s = rng::derive_seed(seed, k as u64);
        let mut r = rng::seeded(s);
        let model = if k % 2 == 0 {
            let mut m = QModel::tabular(grid, env.action_count());
            m.params_mut().iter_mut().for_each(|p| *p = r.random_range(-3.0..3.0));
            m
        } else {
            QModel::dense(&[8, 8], env.action_count(), env.half_extent(), s)
        };
        let batch = random_batch(&env, &mut r, 16, Some(1.0));
        let policy_term = if k % 3 == 0 { PolicyTerm::Sample } else { PolicyTerm::V0 };
        let cfg = |mode| ObjectiveConfig {
            mode,
            alpha: 1.0,
            policy_term,
            gamma: 0.95,
            ..ObjectiveConfig::default()
        };
        let iq = objectives::objective(&batch, &model, &cfg(Mode::Iq))
            .expect("valid")
            .value;
        for mode in [Mode::CiqlE, Mode::CiqlA] {
            let v = objectives::objective(&batch, &model, &cfg(mode)).expect("valid").value;
            worst = worst.max((v - iq).abs() / iq.abs().max(f64::MIN_POSITIVE));
        }
    }
    worst
}

/// Random states, actions and successors inside the default arena. `w` fixes
/// every confidence score; `None` draws them from `[0, 2]`.
pub fn random_batch(env: &EnvConfig, r: &mut rng::Rng, n: usize, w: Option<f64>) -> Batch {
    let h = env.half_extent();
    let state = |r: &mut rng::Rng| State::new(r.random_range(-h..=h), r.random_range(-h..=h), r.random::<bool>());
    let transition = |r: &mut rng::Rng| {
        let s = state(r);
        Transition {
            s,
            a: r.random_range(0..env.action_count()),
            s_next: state(r),
            done: r.random::<f64>() < 0.1,
            keypoint: false,
        }
    };
    let expert = (0..n)
        .map(|_| ExpertSample {
            transition: transition(r),
            w: Some(w.unwrap_or_else(|| r.random_range(0.0..=2.0))),
        })
        .collect();
    let agent = (0..n).map(|_| transition(r)).collect();
    let initial_states = (0..4).map(|_| state(r)).collect();
    Batch {
        expert,
        agent,
        initial_states,
    }
}
