//! Learning from imperfect demonstrations with confidence-weighted inverse
//! soft-Q objectives.
//!
//! Demonstrations are scored per transition by their approach angle to the
//! target ([`confidence`]), a Q-function is fitted with one of the IQ /
//! CIQL objectives ([`objectives`], [`trainer`]) and the recovered reward is
//! checked for alignment with demonstration quality ([`analysis`]).

pub mod analysis;
pub mod confidence;
pub mod env;
pub mod error;
pub mod io;
pub mod objectives;
pub mod oracle;
pub mod qfunc;
pub mod rng;
pub mod trainer;
pub mod types;

pub use confidence::{ConfidenceConfig, ScoredDataset};
pub use env::{DemonstratorSpec, EnvConfig, StartDistribution};
pub use error::{Error, Result};
pub use objectives::{Batch, ExpertSample, Mode, ObjectiveConfig, PolicyTerm};
pub use qfunc::{Grid, QModel};
pub use trainer::{EvalPolicy, ModelSpec, TrainConfig, TrainLog};
pub use types::{Category, CategoryThresholds, Dataset, Source, State, Trajectory, Transition};
