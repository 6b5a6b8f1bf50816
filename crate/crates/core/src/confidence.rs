//! Transition-based confidence: the approach angle between the gripper's
//! displacement and the gripper-to-target direction is mapped through a
//! noise-angle cutoff and a sigmoid to a score in `[0, 1]`; actuator-stage
//! keypoints get a fixed score in `[1, 2]`.
//!
//! Degenerate transitions are resolved by rule rather than rejected:
//!
//! * a stationary step (zero displacement) is scored as if it pointed straight
//!   away from the target (`θ = π`), so it is noise for every `θ_n < π`;
//! * a step starting exactly on the target is inside the goal region by
//!   construction and takes the keypoint score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, Trajectory, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    /// Noise angle in radians.
    pub theta_n: f64,
    pub epsilon: f64,
    pub keypoint_confidence: f64,
    pub target: [f64; 2],
}

impl ConfidenceConfig {
    pub fn new(theta_n: f64, epsilon: f64, keypoint_confidence: f64, target: [f64; 2]) -> Result<Self> {
        let c = ConfidenceConfig {
            theta_n,
            epsilon,
            keypoint_confidence,
            target,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_n > 0.0 && self.theta_n <= std::f64::consts::PI) {
            return Err(Error::config("confidence.theta_n", "must lie in (0, 180] degrees"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::config("confidence.epsilon", "must lie in (0, 0.5)"));
        }
        if !(1.0..=2.0).contains(&self.keypoint_confidence) {
            return Err(Error::config("confidence.keypoint_confidence", "must lie in [1, 2]"));
        }
        if !self.target.iter().all(|v| v.is_finite()) {
            return Err(Error::config("confidence.target", "must be finite"));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        mu_from_epsilon(self.epsilon).expect("validated epsilon")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degenerate {
    /// The step did not move the gripper.
    Stationary,
    /// The gripper sits exactly on the target.
    AtTarget,
}

/// Angle in `[0, π]` between `o - s_t` and `s_next - s_t`.
pub fn approach_angle(s_t: [f64; 2], s_next: [f64; 2], o: [f64; 2]) -> Result<f64, Degenerate> {
    let to_target = [o[0] - s_t[0], o[1] - s_t[1]];
    let motion = [s_next[0] - s_t[0], s_next[1] - s_t[1]];
    let nt = to_target[0].hypot(to_target[1]);
    let nm = motion[0].hypot(motion[1]);
    if nm == 0.0 {
        return Err(Degenerate::Stationary);
    }
    if nt == 0.0 {
        return Err(Degenerate::AtTarget);
    }
    let dot = to_target[0] * motion[0] + to_target[1] * motion[1];
    let cross = to_target[0] * motion[1] - to_target[1] * motion[0];
    // atan2 keeps full precision near 0 and π, where acos of the cosine does not.
    Ok(cross.abs().atan2(dot))
}

/// Slope `μ` solving `sigmoid(μ/2) = ε`, i.e. `2·ln(ε / (1 - ε))`; negative
/// for `ε < 0.5` so confidence falls as the angle grows.
pub fn mu_from_epsilon(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    Ok(2.0 * (epsilon / (1.0 - epsilon)).ln())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Zero beyond the noise angle, `sigmoid((θ/θ_n − ½)·μ)` otherwise.
pub fn confidence_of(theta: f64, config: &ConfidenceConfig) -> f64 {
    if theta > config.theta_n {
        return 0.0;
    }
    sigmoid((theta / config.theta_n - 0.5) * config.mu())
}

pub fn score_transition(tr: &Transition, config: &ConfidenceConfig) -> f64 {
    if tr.keypoint {
        return config.keypoint_confidence;
    }
    match approach_angle(tr.s.position(), tr.s_next.position(), config.target) {
        Ok(theta) => confidence_of(theta, config),
        Err(Degenerate::Stationary) => confidence_of(std::f64::consts::PI, config),
        Err(Degenerate::AtTarget) => config.keypoint_confidence,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDataset {
    pub dataset: Dataset,
    /// `w[i][t]` scores transition `t` of trajectory `i`.
    pub w: Vec<Vec<f64>>,
    pub alpha: f64,
    pub config: ConfidenceConfig,
}

impl ScoredDataset {
    pub fn flat_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.w.iter().flatten().copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.dataset.trajectories.len() {
            return Err(Error::invariant("<dataset>", "score rows do not match trajectories"));
        }
        for (traj, w) in self.dataset.trajectories.iter().zip(&self.w) {
            if traj.len() != w.len() {
                return Err(Error::invariant(
                    &traj.id,
                    "score count does not match transition count",
                ));
            }
            if w.iter().any(|v| !(0.0..=2.0).contains(v)) {
                return Err(Error::invariant(&traj.id, "score outside [0, 2]"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invariant("<dataset>", "alpha outside [0, 1]"));
        }
        Ok(())
    }
}

pub fn score_dataset(dataset: &Dataset, config: &ConfidenceConfig) -> ScoredDataset {
    let w: Vec<Vec<f64>> = dataset
        .trajectories
        .iter()
        .map(|traj| traj.transitions.iter().map(|tr| score_transition(tr, config)).collect())
        .collect();
    let flat: Vec<f64> = w.iter().flatten().copied().collect();
    let alpha = estimate_alpha(&flat).unwrap_or(0.0);
    ScoredDataset {
        dataset: dataset.clone(),
        w,
        alpha,
        config: *config,
    }
}

/// Mean of the scores clipped to `[0, 1]`; keypoint emphasis above 1 does not
/// count as extra probability mass.
pub fn estimate_alpha(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Domain("cannot estimate alpha from an empty score list".into()));
    }
    let sum: f64 = scores.iter().map(|w| w.clamp(0.0, 1.0)).sum();
    Ok(sum / scores.len() as f64)
}

/// Keeps transitions with positive score. Trajectories that lose nothing are
/// returned unchanged; the others are split into fragments at every removed
/// transition, each fragment carrying its parent id.
pub fn filter_noise(scored: &ScoredDataset) -> Dataset {
    let mut out = Vec::new();
    for (traj, w) in scored.dataset.trajectories.iter().zip(&scored.w) {
        if w.iter().all(|&v| v > 0.0) {
            if !traj.is_empty() {
                out.push(traj.clone());
            }
            continue;
        }
        let mut fragment: Vec<Transition> = Vec::new();
        let mut k = 0;
        let mut flush = |fragment: &mut Vec<Transition>, out: &mut Vec<Trajectory>| {
            if fragment.is_empty() {
                return;
            }
            out.push(Trajectory {
                id: format!("{}/{}", traj.id, k),
                source: traj.source,
                category: traj.category,
                parent: Some(traj.id.clone()),
                transitions: std::mem::take(fragment),
            });
            k += 1;
        };
        for (tr, &score) in traj.transitions.iter().zip(w) {
            if score > 0.0 {
                fragment.push(*tr);
            } else {
                flush(&mut fragment, &mut out);
            }
        }
        flush(&mut fragment, &mut out);
    }
    Dataset::new(scored.dataset.env.clone(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::types::{Category, Source, State};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn config(theta_n_deg: f64, epsilon: f64) -> ConfidenceConfig {
        ConfidenceConfig::new(theta_n_deg.to_radians(), epsilon, 1.5, [0.4, 0.4]).unwrap()
    }

    fn straight(from: [f64; 2], dir: [f64; 2], n: usize) -> Trajectory {
        let transitions = (0..n)
            .map(|i| {
                let p = |k: usize| [from[0] + dir[0] * k as f64, from[1] + dir[1] * k as f64];
                let (a, b) = (p(i), p(i + 1));
                Transition {
                    s: State::new(a[0], a[1], false),
                    a: 0,
                    s_next: State::new(b[0], b[1], false),
                    done: false,
                    keypoint: false,
                }
            })
            .collect();
        Trajectory {
            id: "s".into(),
            source: Source::Synthetic,
            category: Category::Uncategorized,
            parent: None,
            transitions,
        }
    }

    #[test]
    fn angle_examples() {
        assert_eq!(approach_angle([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]).unwrap(), 0.0);
        assert!((approach_angle([0.0, 0.0], [0.0, 1.0], [1.0, 0.0]).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((approach_angle([0.0, 0.0], [-1.0, 0.0], [1.0, 0.0]).unwrap() - PI).abs() < 1e-15);
        assert_eq!(
            approach_angle([0.0, 0.0], [0.0, 0.0], [1.0, 0.0]),
            Err(Degenerate::Stationary)
        );
        assert_eq!(
            approach_angle([1.0, 0.0], [2.0, 0.0], [1.0, 0.0]),
            Err(Degenerate::AtTarget)
        );
    }

    /// Bisection on `sigmoid(μ/2) = ε` over `μ ∈ [-100, 0]`.
    fn mu_by_bisection(eps: f64) -> f64 {
        let (mut lo, mut hi) = (-100.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sigmoid(0.5 * mid) < eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn mu_matches_bisection() {
        for eps in [0.05, 0.1, 0.3, 0.49] {
            let mu = mu_from_epsilon(eps).unwrap();
            assert!(mu < 0.0);
            assert!((mu - mu_by_bisection(eps)).abs() < 1e-9);
            assert!((sigmoid(0.5 * mu) - eps).abs() < 1e-15);
        }
        assert!((mu_from_epsilon(0.05).unwrap() - -5.8889).abs() < 1e-4);
        assert!((mu_from_epsilon(0.1).unwrap() - -4.3944).abs() < 1e-4);
        for bad in [0.5, 0.0, -0.1, 0.7] {
            assert!(mu_from_epsilon(bad).is_err());
        }
    }

    #[test]
    fn confidence_examples() {
        let c = config(60.0, 0.05);
        assert!((confidence_of(c.theta_n / 2.0, &c) - 0.5).abs() < 1e-15);
        assert!((confidence_of(c.theta_n, &c) - 0.05).abs() < 1e-15);
        assert!((confidence_of(0.0, &c) - 0.95).abs() < 1e-15);
        assert_eq!(confidence_of(90f64.to_radians(), &c), 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ConfidenceConfig::new(0.0, 0.05, 1.5, [0.0; 2]).is_err());
        assert!(ConfidenceConfig::new(4.0, 0.05, 1.5, [0.0; 2]).is_err());
        assert!(ConfidenceConfig::new(1.0, 0.5, 1.5, [0.0; 2]).is_err());
        assert!(ConfidenceConfig::new(1.0, 0.05, 2.5, [0.0; 2]).is_err());
        assert!(ConfidenceConfig::new(PI, 0.05, 1.0, [0.0; 2]).is_ok());
    }

    #[test]
    fn scoring_straight_toward_and_away() {
        let env = EnvConfig::default();
        let c = config(60.0, 0.05);
        let d = 0.05 / 2f64.sqrt();
        let toward = Dataset::new(env.clone(), vec![straight([-0.4, -0.4], [d, d], 10)]);
        let scored = score_dataset(&toward, &c);
        for &w in scored.w[0].iter() {
            assert!((w - 0.95).abs() < 1e-9, "{w}");
        }
        assert!((scored.alpha - 0.95).abs() < 1e-9);

        let away = Dataset::new(env, vec![straight([0.0, 0.0], [-d, -d], 5)]);
        let scored = score_dataset(&away, &c);
        assert!(scored.w[0].iter().all(|&w| w == 0.0));
        assert_eq!(scored.alpha, 0.0);
    }

    #[test]
    fn keypoint_and_degenerate_rules() {
        let c = config(60.0, 0.05);
        let s = State::new(0.0, 0.0, false);
        let mut tr = Transition {
            s,
            a: 8,
            s_next: s.with_grasp(true),
            done: true,
            keypoint: true,
        };
        assert_eq!(score_transition(&tr, &c), 1.5);
        tr.keypoint = false;
        assert_eq!(score_transition(&tr, &c), 0.0, "stationary step is noise");
        let full = config(180.0, 0.05);
        assert!((score_transition(&tr, &full) - 0.05).abs() < 1e-15);

        let on_target = Transition {
            s: State::new(0.4, 0.4, false),
            a: 0,
            s_next: State::new(0.45, 0.4, false),
            done: false,
            keypoint: false,
        };
        assert_eq!(score_transition(&on_target, &c), 1.5);
    }

    #[test]
    fn alpha_examples() {
        assert!((estimate_alpha(&[1.0, 0.5, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(estimate_alpha(&[1.0; 4]).unwrap(), 1.0);
        assert!((estimate_alpha(&[0.95, 0.95, 0.0, 1.5]).unwrap() - 0.725).abs() < 1e-15);
        assert!(estimate_alpha(&[]).is_err());
    }

    fn scored_with(w: Vec<f64>) -> ScoredDataset {
        let d = 0.05 / 2f64.sqrt();
        let mut traj = straight([-0.4, -0.4], [d, d], w.len());
        traj.transitions.last_mut().unwrap().done = true;
        let dataset = Dataset::new(EnvConfig::default(), vec![traj]);
        let alpha = estimate_alpha(&w).unwrap();
        ScoredDataset {
            dataset,
            w: vec![w],
            alpha,
            config: config(60.0, 0.05),
        }
    }

    #[test]
    fn filter_examples() {
        let keep = scored_with(vec![0.95; 4]);
        assert_eq!(filter_noise(&keep), keep.dataset);

        let none = scored_with(vec![0.0; 4]);
        assert!(filter_noise(&none).trajectories.is_empty());

        let split = scored_with(vec![0.9, 0.8, 0.0, 0.7]);
        let out = filter_noise(&split);
        let lens: Vec<usize> = out.trajectories.iter().map(Trajectory::len).collect();
        assert_eq!(lens, vec![2, 1]);
        for frag in &out.trajectories {
            assert_eq!(frag.parent.as_deref(), Some("s"));
            assert!(frag.validate(8).is_ok());
        }
        assert!(out.trajectories[1].transitions[0].done);
    }

    proptest! {
        #[test]
        fn monotone_below_noise_angle(
            theta_n in 0.05f64..=PI, eps in 0.001f64..0.499, a in 0.0f64..1.0, b in 0.0f64..1.0
        ) {
            let c = ConfidenceConfig::new(theta_n, eps, 1.0, [0.0; 2]).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(confidence_of(lo * theta_n, &c) > confidence_of(hi * theta_n, &c));
        }

        #[test]
        fn zero_exactly_beyond_noise_angle(theta_n in 0.05f64..3.1, theta in 0.0f64..=PI) {
            let c = ConfidenceConfig::new(theta_n, 0.05, 1.0, [0.0; 2]).unwrap();
            prop_assert_eq!(confidence_of(theta, &c) == 0.0, theta > theta_n);
        }

        #[test]
        fn point_symmetric_about_half_noise_angle(theta_n in 0.05f64..=PI, frac in 0.0f64..=1.0, eps in 0.01f64..0.49) {
            let c = ConfidenceConfig::new(theta_n, eps, 1.0, [0.0; 2]).unwrap();
            let delta = frac * theta_n / 2.0;
            let sum = confidence_of(theta_n / 2.0 + delta, &c) + confidence_of(theta_n / 2.0 - delta, &c);
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn alpha_in_unit_interval(w in proptest::collection::vec(0.0f64..=2.0, 1..50)) {
            let a = estimate_alpha(&w).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn scoring_is_deterministic(seed in 0u64..50) {
            let env = EnvConfig::default();
            let ds = crate::env::generate_dataset(&env, &[crate::env::DemonstratorSpec {
                noise_p: 0.5, seed, n_trajectories: 2, category_target: None,
            }]).unwrap();
            let c = ConfidenceConfig::new(1.0, 0.05, 1.5, env.target).unwrap();
            prop_assert_eq!(score_dataset(&ds, &c), score_dataset(&ds, &c));
        }
    }
}
