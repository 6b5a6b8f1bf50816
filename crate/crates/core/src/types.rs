//! Transitions, trajectories, datasets and length-based categorization.

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};

/// Gripper state: planar position in meters plus the grasp flag (0 or 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub [f64; 3]);

impl State {
    pub const DIM: usize = 3;

    pub fn new(x: f64, y: f64, grasped: bool) -> Self {
        State([x, y, if grasped { 1.0 } else { 0.0 }])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn position(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn grasped(&self) -> bool {
        self.0[2] != 0.0
    }

    pub fn with_grasp(&self, grasped: bool) -> Self {
        State::new(self.0[0], self.0[1], grasped)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: usize,
    pub s_next: State,
    pub done: bool,
    /// Actuator-stage datum, e.g. the step that closes the gripper on the target.
    #[serde(default)]
    pub keypoint: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Better,
    Worse,
    Failed,
    Uncategorized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub source: Source,
    pub category: Category,
    /// Set on fragments produced by noise filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    /// Number of decision steps.
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn initial_state(&self) -> Option<State> {
        self.transitions.first().map(|t| t.s)
    }

    /// Checks chaining, terminal placement and transition shape.
    pub fn validate(&self, action_count: usize) -> Result<()> {
        let last = self.transitions.len().saturating_sub(1);
        for (t, tr) in self.transitions.iter().enumerate() {
            if tr.a >= action_count {
                return Err(Error::invariant(
                    &self.id,
                    format!("step {t}: action {} outside action set of {action_count}", tr.a),
                ));
            }
            if tr.s.0.iter().chain(tr.s_next.0.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invariant(&self.id, format!("step {t}: non-finite state")));
            }
            if tr.done && t != last {
                return Err(Error::invariant(
                    &self.id,
                    format!("step {t}: done set before the final transition"),
                ));
            }
            if t < last && tr.s_next != self.transitions[t + 1].s {
                return Err(Error::invariant(
                    &self.id,
                    format!("chain broken at step {t}: s_next does not equal s of step {}", t + 1),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env: EnvConfig,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(env: EnvConfig, trajectories: Vec<Trajectory>) -> Self {
        Dataset { env, trajectories }
    }

    pub fn empty(env: EnvConfig) -> Self {
        Dataset::new(env, Vec::new())
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let action_count = self.env.action_count();
        for traj in &self.trajectories {
            traj.validate(action_count)?;
        }
        Ok(())
    }
}

/// Inclusive length intervals for the Better and Worse categories plus the
/// episode cap at which a demonstration counts as Failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryThresholds {
    pub better: (usize, usize),
    pub worse: (usize, usize),
    pub failed_length: usize,
}

impl CategoryThresholds {
    /// 500-step teleoperation budget: Better 100-150, Worse 200-400, Failed 500.
    pub const REFERENCE: CategoryThresholds = CategoryThresholds {
        better: (100, 150),
        worse: (200, 400),
        failed_length: 500,
    };

    pub fn new(better: (usize, usize), worse: (usize, usize), failed_length: usize) -> Result<Self> {
        let t = CategoryThresholds {
            better,
            worse,
            failed_length,
        };
        t.validate()?;
        Ok(t)
    }

    /// Reference thresholds rescaled to an episode cap of `max_steps`.
    pub fn scaled_to(max_steps: usize) -> Self {
        let r = max_steps as f64 / Self::REFERENCE.failed_length as f64;
        let scale = |v: usize| ((v as f64) * r).round() as usize;
        let b = Self::REFERENCE.better;
        let w = Self::REFERENCE.worse;
        CategoryThresholds {
            better: (scale(b.0), scale(b.1)),
            worse: (scale(w.0), scale(w.1)),
            failed_length: max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.better.0 <= self.better.1
            && self.better.1 < self.worse.0
            && self.worse.0 <= self.worse.1
            && self.worse.1 < self.failed_length;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "thresholds",
                format!("intervals must be ordered and disjoint, got {self:?}"),
            ))
        }
    }

    pub fn categorize_length(&self, length: usize) -> Category {
        if length >= self.failed_length {
            Category::Failed
        } else if (self.better.0..=self.better.1).contains(&length) {
            Category::Better
        } else if (self.worse.0..=self.worse.1).contains(&length) {
            Category::Worse
        } else {
            Category::Uncategorized
        }
    }
}

pub fn categorize(trajectory: &Trajectory, thresholds: &CategoryThresholds) -> Category {
    thresholds.categorize_length(trajectory.len())
}
