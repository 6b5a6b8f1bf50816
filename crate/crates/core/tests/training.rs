use std::f64::consts::PI;

use ciql_core::confidence::{filter_noise, score_dataset};
use ciql_core::env::generate_dataset;
use ciql_core::oracle::stationarity_env;
use ciql_core::trainer::{self, train, train_with_observer, EvalRecord, Observer};
use ciql_core::{Dataset, DemonstratorSpec, EnvConfig, Mode, ModelSpec, QModel, TrainConfig};

fn lattice() -> (EnvConfig, Dataset) {
    let env = stationarity_env();
    let spec = DemonstratorSpec {
        noise_p: 0.0,
        seed: 5,
        n_trajectories: 5,
        category_target: None,
    };
    let data = generate_dataset(&env, &[spec]).unwrap();
    (env, data)
}

fn noisy_lattice() -> (EnvConfig, Dataset) {
    let env = stationarity_env();
    let specs = [0.0, 0.4].map(|noise_p| DemonstratorSpec {
        noise_p,
        seed: 9,
        n_trajectories: 6,
        category_target: None,
    });
    let data = generate_dataset(&env, &specs).unwrap();
    (env, data)
}

fn small_config(mode: Mode) -> TrainConfig {
    let mut c = TrainConfig {
        model: ModelSpec::Tabular { resolution: 5 },
        total_steps: 2_000,
        batch_size: 64,
        eval_interval: 500,
        eval_episodes: 50,
        eval_seeds: 2,
        lr: 0.02,
        ..TrainConfig::default()
    };
    c.objective.mode = mode;
    c
}

fn bits(m: &QModel) -> Vec<u64> {
    m.params().iter().map(|p| p.to_bits()).collect()
}

#[test]
fn iq_learns_noise_free_lattice_demos() {
    let (env, data) = lattice();
    let (_, log) = train(&data, &small_config(Mode::Iq), &env).unwrap();
    let last = log.final_record().unwrap();
    assert_eq!(last.step, 2_000);
    assert!(last.success_mean >= 0.9, "success {}", last.success_mean);
    assert_eq!(log.records.len(), 4);
}

#[test]
fn zero_steps_returns_untrained_model() {
    let (env, data) = lattice();
    let config = TrainConfig {
        total_steps: 0,
        ..small_config(Mode::CiqlA)
    };
    let (model, log) = train(&data, &config, &env).unwrap();
    assert!(log.records.is_empty());
    assert!(model.params().iter().all(|&p| p == 0.0));
}

#[test]
fn training_is_deterministic() {
    let (env, data) = noisy_lattice();
    let config = TrainConfig {
        total_steps: 600,
        ..small_config(Mode::CiqlA)
    };
    let (a, log_a) = train(&data, &config, &env).unwrap();
    let (b, log_b) = train(&data, &config, &env).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(log_a, log_b);
    let other = TrainConfig { seed: 1, ..config };
    let (c, _) = train(&data, &other, &env).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn iq_filter_is_iq_on_filtered_data() {
    let (env, data) = noisy_lattice();
    let config = TrainConfig {
        total_steps: 600,
        ..small_config(Mode::IqFilter)
    };
    let filtered = filter_noise(&score_dataset(&data, &config.confidence(&env).unwrap()));
    assert!(filtered.transition_count() < data.transition_count());
    let (a, _) = train(&data, &config, &env).unwrap();
    let iq = TrainConfig {
        objective: ciql_core::ObjectiveConfig {
            mode: Mode::Iq,
            ..config.objective
        },
        ..config.clone()
    };
    let (b, _) = train(&filtered, &iq, &env).unwrap();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn iq_filter_at_180_degrees_matches_iq() {
    let (env, data) = noisy_lattice();
    let mut config = TrainConfig {
        total_steps: 400,
        theta_n: PI,
        ..small_config(Mode::IqFilter)
    };
    let (a, log_a) = train(&data, &config, &env).unwrap();
    config.objective.mode = Mode::Iq;
    let (b, log_b) = train(&data, &config, &env).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(log_a, log_b);
}

#[derive(Default)]
struct Recorder {
    objectives: Vec<f64>,
    evals: Vec<usize>,
}

impl Observer for Recorder {
    fn on_step(&mut self, _step: usize, objective: f64) {
        self.objectives.push(objective);
    }

    fn on_eval(&mut self, record: &EvalRecord, _model: &QModel) -> ciql_core::Result<()> {
        self.evals.push(record.step);
        Ok(())
    }
}

#[test]
fn objective_rises_during_training() {
    let (env, data) = lattice();
    let mut rec = Recorder::default();
    let config = small_config(Mode::Iq);
    train_with_observer(&data, &config, &env, &mut rec).unwrap();
    assert_eq!(rec.objectives.len(), 2_000);
    assert_eq!(rec.evals, vec![500, 1_000, 1_500, 2_000]);
    let head: f64 = rec.objectives[..100].iter().sum::<f64>() / 100.0;
    let tail: f64 = rec.objectives[1_900..].iter().sum::<f64>() / 100.0;
    assert!(tail > head, "objective {head} -> {tail}");
}

#[test]
fn ema_target_variant_trains_to_finite_values() {
    let (env, data) = noisy_lattice();
    let config = TrainConfig {
        total_steps: 500,
        target_ema_tau: 0.005,
        ..small_config(Mode::CiqlE)
    };
    let (model, log) = train(&data, &config, &env).unwrap();
    assert!(model.params().iter().all(|p| p.is_finite()));
    assert!(log.records.iter().all(|r| r.objective.is_finite()));
}

#[test]
fn mismatched_environment_is_rejected() {
    let (env, data) = lattice();
    let other = EnvConfig {
        max_steps: env.max_steps + 1,
        ..env
    };
    let err = train(&data, &small_config(Mode::Iq), &other).unwrap_err();
    assert!(err.to_string().contains("dataset.env"), "{err}");
}

#[test]
fn evaluation_of_checkpoint_matches_final_record() {
    let (env, data) = lattice();
    let config = TrainConfig {
        total_steps: 700,
        ..small_config(Mode::CiqlA)
    };
    let (model, log) = train(&data, &config, &env).unwrap();
    let s = trainer::evaluate(
        &model,
        &env,
        config.eval_episodes,
        &config.eval_seed_list(),
        config.eval_policy,
    );
    let last = log.final_record().unwrap();
    assert_eq!((s.mean, s.sd), (last.success_mean, last.success_sd));
}
