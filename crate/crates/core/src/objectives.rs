//! Inverse soft-Q objectives.
//!
//! With `π = softmax(Q)` the soft value is `V(s) = logsumexp_a Q(s, a)` and the
//! implied reward of a transition is the inverse soft Bellman residual
//! `r = Q(s, a) − γ·V(s')` (`V = 0` past a terminal step). Every objective has
//! the shape
//!
//! ```text
//! J(Q) = mean_expert[ f(r, w) ] − c · policy_term
//! ```
//!
//! | mode        | f(r, w)               | c |
//! |-------------|-----------------------|---|
//! | `Iq`        | φ(r)                  | 1 |
//! | `IqFilter`  | φ(r) (on filtered data) | 1 |
//! | `CiqlE`     | (w/α)·φ(r)            | 1 |
//! | `CiqlA`     | φ(r) − (1 − w)·r      | α |
//!
//! with the χ² regularizer `φ(x) = x − x²/(4σ)`. The policy term is either
//! `(1−γ)·mean V(s₀)` over initial states or, from agent transitions,
//! `mean[V(s) − γ·V(s')]`; both estimate `E_ρπ[r] + H(π)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qfunc::QModel;
use crate::types::{State, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Iq,
    IqFilter,
    CiqlE,
    CiqlA,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Iq, Mode::IqFilter, Mode::CiqlE, Mode::CiqlA];

    pub fn uses_confidence(self) -> bool {
        matches!(self, Mode::CiqlE | Mode::CiqlA)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Iq => "iq",
            Mode::IqFilter => "iq-filter",
            Mode::CiqlE => "ciql-e",
            Mode::CiqlA => "ciql-a",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || m.name().replace('-', "_").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyTerm {
    V0,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub mode: Mode,
    pub sigma: f64,
    pub gamma: f64,
    pub policy_term: PolicyTerm,
    /// Prior of the optimal policy; unused by the IQ modes.
    pub alpha: f64,
    /// Under `PolicyTerm::Sample`, also draw policy-term samples from the
    /// expert batch.
    pub mix_expert_in_policy_term: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            mode: Mode::CiqlA,
            sigma: 0.5,
            gamma: 0.99,
            policy_term: PolicyTerm::V0,
            alpha: 1.0,
            mix_expert_in_policy_term: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("train.objective.sigma", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("train.objective.gamma", "must lie in (0, 1)"));
        }
        if self.mode.uses_confidence() && !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(
                "train.objective.alpha",
                "confidence modes need alpha in (0, 1]",
            ));
        }
        Ok(())
    }
}

pub fn phi(x: f64, sigma: f64) -> f64 {
    x - x * x / (4.0 * sigma)
}

pub fn phi_prime(x: f64, sigma: f64) -> f64 {
    1.0 - x / (2.0 * sigma)
}

/// `log Σ exp(q)`, shifted by the row maximum.
pub fn soft_value(q_row: &[f64]) -> f64 {
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + q_row.iter().map(|q| (q - max).exp()).sum::<f64>().ln()
}

/// Softmax of the row: the minimizer of `E_π[log π − Q]`.
pub fn policy_from_q(q_row: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; q_row.len()];
    softmax_into(q_row, &mut p);
    p
}

pub(crate) fn softmax_into(q_row: &[f64], out: &mut [f64]) {
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, q) in out.iter_mut().zip(q_row) {
        *o = (q - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// `r = Q(s, a) − γ·V(s')`, with `V(s') = 0` when the step is terminal.
pub fn inverse_soft_bellman(q_sa: f64, v_next: f64, done: bool, gamma: f64) -> f64 {
    if done {
        q_sa
    } else {
        q_sa - gamma * v_next
    }
}

/// Expert-side integrand `f(r, w)` of the given mode and its derivative in `r`.
pub fn expert_term(mode: Mode, r: f64, w: f64, alpha: f64, sigma: f64) -> (f64, f64) {
    match mode {
        Mode::Iq | Mode::IqFilter => (phi(r, sigma), phi_prime(r, sigma)),
        Mode::CiqlE => {
            let k = w / alpha;
            (k * phi(r, sigma), k * phi_prime(r, sigma))
        }
        Mode::CiqlA => (phi(r, sigma) - (1.0 - w) * r, phi_prime(r, sigma) - (1.0 - w)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertSample {
    pub transition: Transition,
    /// Confidence score; required by the confidence modes.
    pub w: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub expert: Vec<ExpertSample>,
    pub agent: Vec<Transition>,
    pub initial_states: Vec<State>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub expert_term: f64,
    /// Policy term before the mode's coefficient is applied.
    pub policy_term: f64,
    pub grad: Vec<f64>,
}

/// Objective and its exact gradient, bootstrapping `V(s')` through `model`.
pub fn objective(batch: &Batch, model: &QModel, config: &ObjectiveConfig) -> Result<ObjectiveValue> {
    objective_with_target(batch, model, None, config)
}

/// As [`objective`], but when `target` is given every `V(s')` is read from it
/// and treated as a constant; the gradient is then exact for the returned
/// value with respect to `model` alone.
pub fn objective_with_target(
    batch: &Batch,
    model: &QModel,
    target: Option<&QModel>,
    config: &ObjectiveConfig,
) -> Result<ObjectiveValue> {
    config.validate()?;
    if batch.expert.is_empty() {
        return Err(Error::Objective("expert batch is empty".into()));
    }
    let n_actions = model.action_count();
    let gamma = config.gamma;
    let mut grad = vec![0.0; model.param_count()];
    let mut q = vec![0.0; n_actions];
    let mut q_next = vec![0.0; n_actions];
    let mut pi = vec![0.0; n_actions];
    let mut dq = vec![0.0; n_actions];

    let n_expert = batch.expert.len() as f64;
    let mut expert_sum = 0.0;
    for sample in &batch.expert {
        let tr = &sample.transition;
        let w = match (config.mode.uses_confidence(), sample.w) {
            (true, Some(w)) => w,
            (true, None) => {
                return Err(Error::Objective(format!(
                    "mode {} needs a confidence score on every expert transition",
                    config.mode
                )))
            }
            (false, _) => 1.0,
        };
        model.q_values_into(&tr.s, &mut q);
        let v_next = if tr.done {
            0.0
        } else {
            let source = target.unwrap_or(model);
            source.q_values_into(&tr.s_next, &mut q_next);
            soft_value(&q_next)
        };
        let r = inverse_soft_bellman(q[tr.a], v_next, tr.done, gamma);
        let (f, coef) = expert_term(config.mode, r, w, config.alpha, config.sigma);
        expert_sum += f;
        if target.is_none() && !tr.done {
            // ∂V(s')/∂Q(s', ·) = π(· | s'); q_next still holds the row of s'.
            softmax_into(&q_next, &mut pi);
            pi.iter_mut().for_each(|p| *p *= -gamma * coef / n_expert);
            model.accumulate_grad(&tr.s_next, &pi, &mut grad);
        }
        dq.iter_mut().for_each(|d| *d = 0.0);
        dq[tr.a] = coef / n_expert;
        model.accumulate_grad(&tr.s, &dq, &mut grad);
    }
    let expert_term = expert_sum / n_expert;

    let policy_coef = match config.mode {
        Mode::CiqlA => config.alpha,
        _ => 1.0,
    };
    let policy_term = match config.policy_term {
        PolicyTerm::V0 => {
            if batch.initial_states.is_empty() {
                return Err(Error::Objective("policy term v0 needs initial states".into()));
            }
            let n0 = batch.initial_states.len() as f64;
            let scale = -policy_coef * (1.0 - gamma) / n0;
            let mut sum = 0.0;
            for s in &batch.initial_states {
                model.q_values_into(s, &mut q);
                sum += soft_value(&q);
                softmax_into(&q, &mut pi);
                pi.iter_mut().for_each(|p| *p *= scale);
                model.accumulate_grad(s, &pi, &mut grad);
            }
            (1.0 - gamma) * sum / n0
        }
        PolicyTerm::Sample => {
            let extra: &[ExpertSample] = if config.mix_expert_in_policy_term {
                &batch.expert
            } else {
                &[]
            };
            let samples: Vec<&Transition> = batch.agent.iter().chain(extra.iter().map(|e| &e.transition)).collect();
            if samples.is_empty() {
                return Err(Error::Objective("policy term sample needs agent transitions".into()));
            }
            let n = samples.len() as f64;
            let scale = -policy_coef / n;
            let mut sum = 0.0;
            for tr in samples {
                model.q_values_into(&tr.s, &mut q);
                let v = soft_value(&q);
                softmax_into(&q, &mut pi);
                pi.iter_mut().for_each(|p| *p *= scale);
                model.accumulate_grad(&tr.s, &pi, &mut grad);
                let v_next = if tr.done {
                    0.0
                } else {
                    let source = target.unwrap_or(model);
                    source.q_values_into(&tr.s_next, &mut q_next);
                    if target.is_none() {
                        softmax_into(&q_next, &mut pi);
                        pi.iter_mut().for_each(|p| *p *= -gamma * scale);
                        model.accumulate_grad(&tr.s_next, &pi, &mut grad);
                    }
                    soft_value(&q_next)
                };
                sum += v - gamma * v_next;
            }
            sum / n
        }
    };

    let value = expert_term - policy_coef * policy_term;
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            index,
        });
    }
    Ok(ObjectiveValue {
        value,
        expert_term,
        policy_term,
        grad,
    })
}

/// Closed-form stationary reward of each objective at fixed occupancies:
/// `2(1 − ρπ/ρE)` for the IQ modes, `2(wρE − αρπ)/(wρE)` for CIQL-E and
/// `2(wρE − αρπ)/ρE` for CIQL-A. CIQL-E has none on zero-confidence data.
pub fn divergence_reward_oracle(rho_e: f64, rho_pi: f64, w: f64, alpha: f64, mode: Mode) -> Result<f64> {
    if !(rho_e > 0.0 && rho_e.is_finite()) {
        return Err(Error::Domain("expert occupancy must be positive".into()));
    }
    match mode {
        Mode::Iq | Mode::IqFilter => Ok(2.0 * (1.0 - rho_pi / rho_e)),
        Mode::CiqlE => {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Domain("CIQL-E divergence reward is undefined for w = 0".into()));
            }
            Ok(2.0 * (w * rho_e - alpha * rho_pi) / (w * rho_e))
        }
        Mode::CiqlA => Ok(2.0 * (w * rho_e - alpha * rho_pi) / rho_e),
    }
}

/// Per-transition reward implied by the model: `Q(s, a) − γ·V(s')`.
pub fn recover_reward(model: &QModel, transitions: &[Transition], gamma: f64) -> Vec<f64> {
    transitions
        .iter()
        .map(|tr| {
            let q = model.q_values(&tr.s);
            let v_next = if tr.done {
                0.0
            } else {
                soft_value(&model.q_values(&tr.s_next))
            };
            inverse_soft_bellman(q[tr.a], v_next, tr.done, gamma)
        })
        .collect()
}
