//! Action-value models sharing one interface: a table over a discretized
//! position grid (times the grasp flag) and a small tanh MLP with hand-written
//! backpropagation. Parameters always live in one flat vector so optimizers and
//! gradient checks treat both kinds alike.

mod checkpoint;
mod dense;
mod gradcheck;
mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::State;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{finite_difference_check, GradReport};
pub use optim::{apply_gradient, Optimizer, UpdateRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tabular,
    Dense,
}

/// Uniform grid over `[-half_extent, half_extent]²`, doubled by the grasp flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub resolution: usize,
    pub half_extent: f64,
}

impl Grid {
    pub fn new(resolution: usize, half_extent: f64) -> Self {
        assert!(resolution > 0 && half_extent > 0.0);
        Grid {
            resolution,
            half_extent,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.resolution * self.resolution * 2
    }

    fn axis(&self, v: f64) -> usize {
        let u = (v + self.half_extent) / (2.0 * self.half_extent) * self.resolution as f64;
        (u.floor().max(0.0) as usize).min(self.resolution - 1)
    }

    /// Flat cell index of a state.
    pub fn cell(&self, s: &State) -> usize {
        let ix = self.axis(s.x());
        let iy = self.axis(s.y());
        (ix * self.resolution + iy) * 2 + usize::from(s.grasped())
    }

    /// Representative state at the center of a cell.
    pub fn center(&self, cell: usize) -> State {
        let g = cell % 2;
        let xy = cell / 2;
        let (ix, iy) = (xy / self.resolution, xy % self.resolution);
        let width = 2.0 * self.half_extent / self.resolution as f64;
        State::new(
            -self.half_extent + (ix as f64 + 0.5) * width,
            -self.half_extent + (iy as f64 + 0.5) * width,
            g == 1,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Tabular {
        grid: Grid,
        action_count: usize,
    },
    Dense {
        /// Layer widths from input (3) to output (`action_count`).
        layers: Vec<usize>,
        activation: Activation,
        /// Positions are divided by this to land in `[-1, 1]`.
        input_scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub arch: Architecture,
    params: Vec<f64>,
}

impl QModel {
    /// Zero-initialized table.
    pub fn tabular(grid: Grid, action_count: usize) -> Self {
        QModel {
            params: vec![0.0; grid.cell_count() * action_count],
            arch: Architecture::Tabular { grid, action_count },
        }
    }

    /// MLP with the given hidden widths, weights and biases uniform in
    /// `±1/√fan_in`.
    pub fn dense(hidden: &[usize], action_count: usize, input_scale: f64, seed: u64) -> Self {
        let mut layers = vec![State::DIM];
        layers.extend_from_slice(hidden);
        layers.push(action_count);
        let params = dense::init_params(&layers, seed);
        QModel {
            arch: Architecture::Dense {
                layers,
                activation: Activation::Tanh,
                input_scale,
            },
            params,
        }
    }

    pub fn from_parts(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let expected = match &arch {
            Architecture::Tabular { grid, action_count } => grid.cell_count() * action_count,
            Architecture::Dense { layers, .. } => {
                if layers.len() < 2 || layers[0] != State::DIM {
                    return Err(Error::Checkpoint(format!("bad layer sizes {layers:?}")));
                }
                dense::param_count(layers)
            }
        };
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter",
                index: i,
            });
        }
        Ok(QModel { arch, params })
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Architecture::Tabular { .. } => ModelKind::Tabular,
            Architecture::Dense { .. } => ModelKind::Dense,
        }
    }

    pub fn action_count(&self) -> usize {
        match &self.arch {
            Architecture::Tabular { action_count, .. } => *action_count,
            Architecture::Dense { layers, .. } => *layers.last().expect("non-empty layers"),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn q_values(&self, s: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.action_count()];
        self.q_values_into(s, &mut out);
        out
    }

    pub fn q_values_into(&self, s: &State, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.action_count());
        match &self.arch {
            Architecture::Tabular { grid, action_count } => {
                let base = grid.cell(s) * action_count;
                out.copy_from_slice(&self.params[base..base + action_count]);
            }
            Architecture::Dense {
                layers, input_scale, ..
            } => {
                dense::forward(layers, &self.params, &dense::encode(s, *input_scale), out);
            }
        }
    }

    /// Adds `Σ_a dq[a] · ∂Q(s, a)/∂θ` into `grad`.
    pub fn accumulate_grad(&self, s: &State, dq: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(dq.len(), self.action_count());
        debug_assert_eq!(grad.len(), self.params.len());
        match &self.arch {
            Architecture::Tabular { grid, action_count } => {
                let base = grid.cell(s) * action_count;
                for (g, d) in grad[base..base + action_count].iter_mut().zip(dq) {
                    *g += d;
                }
            }
            Architecture::Dense {
                layers, input_scale, ..
            } => {
                dense::backward(layers, &self.params, &dense::encode(s, *input_scale), dq, grad);
            }
        }
    }

    /// `self ← (1 − τ)·self + τ·online`.
    pub fn blend_from(&mut self, online: &QModel, tau: f64) {
        debug_assert_eq!(self.params.len(), online.params.len());
        if tau >= 1.0 {
            self.params.copy_from_slice(&online.params);
            return;
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t += tau * (o - *t);
        }
    }
}

/// Seeded uniform draw in `[-s, s]`, shared by initializers.
fn uniform(rng: &mut rng::Rng, s: f64) -> f64 {
    use rand::Rng as _;
    rng.random_range(-s..=s)
}
