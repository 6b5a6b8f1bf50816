//! Alignment testing and experiment harnesses.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::objectives::{self, Mode};
use crate::qfunc::{Grid, QModel};
use crate::trainer::{self, mean_sd, TrainConfig};
use crate::types::{Dataset, Trajectory};

/// `Σ_t γ^t·r_t` over a trajectory.
pub fn discounted_return(trajectory: &Trajectory, rewards: &[f64], gamma: f64) -> Result<f64> {
    if rewards.len() != trajectory.len() {
        return Err(Error::Domain(format!(
            "{} rewards for a trajectory of length {}",
            rewards.len(),
            trajectory.len()
        )));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Domain(
            "pearson needs two equal-length series of at least 2 values".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("pearson is undefined for a zero-variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub id: String,
    pub length: usize,
    pub discounted_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub pearson: f64,
}

impl AlignmentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,length,discounted_return\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.id, r.length, r.discounted_return);
        }
        out
    }
}

/// Recovered-reward return of every demonstration against its length.
pub fn alignment_test(model: &QModel, dataset: &Dataset, gamma: f64) -> Result<AlignmentReport> {
    if dataset.trajectories.len() < 2 {
        return Err(Error::Domain("alignment needs at least 2 trajectories".into()));
    }
    let rows = dataset
        .trajectories
        .iter()
        .map(|t| {
            let r = objectives::recover_reward(model, &t.transitions, gamma);
            Ok(AlignmentRow {
                id: t.id.clone(),
                length: t.len(),
                discounted_return: discounted_return(t, &r, gamma)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lengths: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
    let returns: Vec<f64> = rows.iter().map(|r| r.discounted_return).collect();
    let pearson = pearson(&lengths, &returns)?;
    Ok(AlignmentReport { rows, pearson })
}

/// Normalized discounted state-action visitation `(1−γ)·Σ_t γ^t·1[s_t, a_t]`
/// over grid cells, indexed `cell·A + a`.
pub fn empirical_occupancy(
    trajectories: &[Trajectory],
    gamma: f64,
    grid: &Grid,
    action_count: usize,
) -> Result<Vec<f64>> {
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(Error::Domain("occupancy needs at least one transition".into()));
    }
    let mut table = vec![0.0; grid.cell_count() * action_count];
    for t in trajectories {
        let mut discount = 1.0 - gamma;
        for tr in &t.transitions {
            table[grid.cell(&tr.s) * action_count + tr.a] += discount;
            discount *= gamma;
        }
    }
    let total: f64 = table.iter().sum();
    table.iter_mut().for_each(|v| *v /= total);
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta_n_deg: f64,
    pub mode: Mode,
    pub seed: u64,
    pub success_mean: f64,
    pub success_sd: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_n_deg,mode,seed,success_mean,success_sd\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.theta_n_deg, r.mode, r.seed, r.success_mean, r.success_sd
            );
        }
        out
    }

    /// Success per (angle, mode) averaged over training seeds: `mode,x,y,err`
    /// with `err` the sample sd across seeds.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("mode,x,y,err\n");
        for (angle, mode, values) in self.grouped() {
            let (m, sd) = mean_sd(&values);
            let _ = writeln!(out, "{mode},{angle},{m},{sd}");
        }
        out
    }

    /// Per (angle, mode) the final success of every seed, in first-seen order.
    pub fn grouped(&self) -> Vec<(f64, Mode, Vec<f64>)> {
        let mut groups: Vec<(f64, Mode, Vec<f64>)> = Vec::new();
        for r in &self.rows {
            match groups.iter_mut().find(|g| g.0 == r.theta_n_deg && g.1 == r.mode) {
                Some(g) => g.2.push(r.success_mean),
                None => groups.push((r.theta_n_deg, r.mode, vec![r.success_mean])),
            }
        }
        groups
    }

    pub fn mean_success(&self, theta_n_deg: f64, mode: Mode) -> Option<f64> {
        self.grouped()
            .into_iter()
            .find(|g| g.0 == theta_n_deg && g.1 == mode)
            .map(|g| mean_sd(&g.2).0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub model: QModel,
    pub success_mean: f64,
    pub success_sd: f64,
}

/// Trains one (angle, mode, seed) cell and reports its final evaluation.
pub fn run_cell(
    dataset: &Dataset,
    base: &TrainConfig,
    env: &EnvConfig,
    theta_n: f64,
    mode: Mode,
    seed: u64,
) -> Result<CellResult> {
    let mut config = base.clone();
    config.theta_n = theta_n;
    config.objective.mode = mode;
    config.seed = seed;
    let (model, log) = trainer::train(dataset, &config, env)?;
    let (success_mean, success_sd) = match log.final_record() {
        Some(r) => (r.success_mean, r.success_sd),
        None => {
            let s = trainer::evaluate(
                &model,
                env,
                config.eval_episodes,
                &config.eval_seed_list(),
                config.eval_policy,
            );
            (s.mean, s.sd)
        }
    };
    Ok(CellResult {
        model,
        success_mean,
        success_sd,
    })
}

/// Full train + evaluate per (angle, mode, seed). Angles are in radians.
/// When both IQ and IQ_FILTER run at 180°, their results must coincide.
pub fn sweep_noise_angle(
    angles: &[f64],
    modes: &[Mode],
    seeds: &[u64],
    base: &TrainConfig,
    dataset: &Dataset,
    env: &EnvConfig,
) -> Result<SweepTable> {
    if let Some(a) = angles
        .iter()
        .find(|a| !(**a > 0.0 && **a <= std::f64::consts::PI + 1e-12))
    {
        return Err(Error::config(
            "sweep.angles",
            format!("{}° is outside (0°, 180°]", a.to_degrees()),
        ));
    }
    let cells: Vec<(f64, Mode, u64)> = seeds
        .iter()
        .flat_map(|&s| angles.iter().flat_map(move |&a| modes.iter().map(move |&m| (a, m, s))))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(angle, mode, seed)| {
            let cell = run_cell(dataset, base, env, angle, mode, seed)?;
            Ok(SweepRow {
                theta_n_deg: round_degrees(angle),
                mode,
                seed,
                success_mean: cell.success_mean,
                success_sd: cell.success_sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = SweepTable { rows: results };
    for r in table
        .rows
        .iter()
        .filter(|r| r.mode == Mode::IqFilter && r.theta_n_deg == 180.0)
    {
        if let Some(iq) = table
            .rows
            .iter()
            .find(|o| o.mode == Mode::Iq && o.seed == r.seed && o.theta_n_deg == 180.0)
        {
            if (iq.success_mean, iq.success_sd) != (r.success_mean, r.success_sd) {
                return Err(Error::Domain(format!(
                    "iq-filter at 180° diverged from iq for seed {}",
                    r.seed
                )));
            }
        }
    }
    Ok(table)
}

/// Degrees rounded to 1e-9 so that table keys survive the radian round trip.
pub fn round_degrees(rad: f64) -> f64 {
    (rad.to_degrees() * 1e9).round() / 1e9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub mode: Mode,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Final success of each mode over training seeds at a fixed noise angle.
pub fn compare_modes(
    modes: &[Mode],
    seeds: &[u64],
    base: &TrainConfig,
    dataset: &Dataset,
    env: &EnvConfig,
) -> Result<Vec<ModeComparison>> {
    let table = sweep_noise_angle(&[base.theta_n], modes, seeds, base, dataset, env)?;
    Ok(modes
        .iter()
        .map(|&mode| {
            let per_seed: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.success_mean)
                .collect();
            let (mean, sd) = mean_sd(&per_seed);
            ModeComparison {
                mode,
                per_seed,
                mean,
                sd,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Category, Source, State, Transition};
    use proptest::prelude::*;

    fn chain(len: usize) -> Trajectory {
        let transitions = (0..len)
            .map(|t| Transition {
                s: State::new(-0.4 + 0.3 * t as f64, 0.0, false),
                a: 0,
                s_next: State::new(-0.4 + 0.3 * (t + 1) as f64, 0.0, false),
                done: t + 1 == len,
                keypoint: false,
            })
            .collect();
        Trajectory {
            id: format!("c{len}"),
            source: Source::Synthetic,
            category: Category::Uncategorized,
            parent: None,
            transitions,
        }
    }

    #[test]
    fn discounted_return_examples() {
        let t = chain(3);
        assert_eq!(discounted_return(&t, &[1.0; 3], 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&t, &[0.0; 3], 0.5).unwrap(), 0.0);
        assert_eq!(discounted_return(&chain(2), &[1.0, -1.0], 1.0).unwrap(), 0.0);
        assert!(discounted_return(&t, &[1.0; 2], 0.5).is_err());
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &up).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&xs, &down).unwrap() + 1.0).abs() < 1e-15);
        // Deviations (−1, 0, 1) and (−1, 1, 0): Σdxdy = 1, Σdx² = Σdy² = 2.
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(pearson(&xs, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let grid = Grid::new(4, 0.5);
        let one = chain(1);
        let occ = empirical_occupancy(std::slice::from_ref(&one), 0.9, &grid, 1).unwrap();
        assert_eq!(occ[grid.cell(&one.transitions[0].s)], 1.0);

        let three = chain(3);
        let occ = empirical_occupancy(std::slice::from_ref(&three), 0.5, &grid, 1).unwrap();
        let masses: Vec<f64> = three.transitions.iter().map(|t| occ[grid.cell(&t.s)]).collect();
        let z = 1.75;
        for (m, e) in masses.iter().zip([1.0 / z, 0.5 / z, 0.25 / z]) {
            assert!((m - e).abs() < 1e-15);
        }
        let twice = empirical_occupancy(&[three.clone(), three], 0.5, &grid, 1).unwrap();
        assert_eq!(twice, occ);
    }

    #[test]
    fn alignment_with_goal_reward_is_negative() {
        // Reward +1 on the final transition only, so η = γ^(T−1) falls with T.
        let gamma = 0.9;
        let trajs: Vec<Trajectory> = (1..=6).map(chain).collect();
        let returns: Vec<f64> = trajs
            .iter()
            .map(|t| {
                let mut r = vec![0.0; t.len()];
                *r.last_mut().unwrap() = 1.0;
                discounted_return(t, &r, gamma).unwrap()
            })
            .collect();
        let lengths: Vec<f64> = trajs.iter().map(|t| t.len() as f64).collect();
        assert!(pearson(&lengths, &returns).unwrap() < 0.0);
    }

    #[test]
    fn alignment_zero_model_is_a_variance_error() {
        // A zero Q gives r = −γ·ln A on non-terminal steps and 0 on the last;
        // make every trajectory length 1 so all returns are 0.
        let env = EnvConfig::default();
        let model = QModel::tabular(Grid::new(4, 0.5), env.action_count());
        let ds = Dataset::new(env, vec![chain(1), chain(1)]);
        assert!(alignment_test(&model, &ds, 0.99).is_err());
        let one = Dataset::new(EnvConfig::default(), vec![chain(1)]);
        assert!(alignment_test(&model, &one, 0.99).is_err());
    }

    #[test]
    fn empty_sweep_is_empty() {
        let env = EnvConfig::default();
        let ds = Dataset::empty(env.clone());
        let t = sweep_noise_angle(&[], &[Mode::Iq], &[0], &TrainConfig::default(), &ds, &env).unwrap();
        assert!(t.rows.is_empty());
    }

    proptest! {
        #[test]
        fn pearson_affine_properties(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..20),
            noise in proptest::collection::vec(-10.0f64..10.0, 20),
            a in 0.1f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x + n).collect();
            let Ok(p) = pearson(&xs, &ys) else { return Ok(()) };
            prop_assert!((-1.0..=1.0).contains(&p));
            let scaled: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
            let flipped: Vec<f64> = ys.iter().map(|y| -a * y + b).collect();
            prop_assert!((pearson(&xs, &scaled).unwrap() - p).abs() < 1e-9);
            prop_assert!((pearson(&xs, &flipped).unwrap() + p).abs() < 1e-9);
        }
    }
}
