use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ciql_core::io::{load_dataset, load_scored};

fn ciql(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ciql"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = ciql(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn gen_demos_writes_the_requested_count_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-demos", "--noise-p", "0.05", "--n", "30"]);
    let first = fs::read(dir.path().join("dataset.jsonl")).unwrap();
    assert_eq!(
        load_dataset(&dir.path().join("dataset.jsonl"))
            .unwrap()
            .trajectories
            .len(),
        30
    );
    ok(dir.path(), &["gen-demos", "--noise-p", "0.05", "--n", "30"]);
    assert_eq!(fs::read(dir.path().join("dataset.jsonl")).unwrap(), first);
    assert!(dir.path().join("config/gen-demos.toml").exists());
}

#[test]
fn scoring_a_straight_line_dataset_gives_alpha_095() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-demos", "--noise-p", "0", "--n", "3"]);
    ok(dir.path(), &["score", "--theta-n", "60", "--epsilon", "0.05"]);
    let scored = load_scored(&dir.path().join("scored.jsonl")).unwrap();
    assert!((scored.alpha - 0.95).abs() < 1e-12, "alpha {}", scored.alpha);
    assert!(scored.flat_scores().all(|w| (w - 0.95).abs() < 1e-12));

    ok(dir.path(), &["filter"]);
    let kept = load_dataset(&dir.path().join("filtered.jsonl")).unwrap();
    assert_eq!(kept, scored.dataset);
}

#[test]
fn eval_of_the_final_checkpoint_reproduces_the_logged_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["gen-demos", "--noise-p", "0.3", "--n", "10"]);
    let flags = ["--episodes", "40", "--eval-seeds", "3"];
    let mut train = vec!["train", "--steps", "1500", "--eval-interval", "500", "--mode", "ciql-e"];
    train.extend(flags);
    ok(out, &train);
    for step in [500, 1000, 1500] {
        assert!(out.join(format!("checkpoints/step-{step:06}.json")).exists());
    }
    let log = fs::read_to_string(out.join("logs/train.csv")).unwrap();
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let last: Vec<&str> = log.lines().last().unwrap().split(',').collect();
    let col = |name: &str| {
        last[header.iter().position(|h| *h == name).unwrap()]
            .parse::<f64>()
            .unwrap()
    };
    assert_eq!(last[0], "1500");

    let mut eval = vec!["eval"];
    eval.extend(flags);
    ok(out, &eval);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("reports/eval.json")).unwrap()).unwrap();
    assert_eq!(report["success_mean"].as_f64().unwrap(), col("success_mean"));
    assert_eq!(report["success_sd"].as_f64().unwrap(), col("success_sd"));

    let stdout = ok(out, &["align"]);
    assert!(stdout.contains("pearson"));
    let rows = fs::read_to_string(out.join("reports/alignment.csv")).unwrap();
    assert_eq!(rows.lines().count(), 11);
}

#[test]
fn sweep_writes_one_row_per_angle_mode_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["gen-demos", "--noise-p", "0.3", "--n", "4"]);
    ok(
        out,
        &[
            "sweep",
            "--angles",
            "10,20,40,60,90,180",
            "--modes",
            "ciql-a,iq-filter,iq",
            "--seeds",
            "2",
            "--steps",
            "100",
            "--episodes",
            "5",
            "--eval-seeds",
            "1",
        ],
    );
    let csv = fs::read_to_string(out.join("reports/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 36);
    for seed in ["0", "1"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some(seed)).count(), 18);
    }
    let plot = fs::read_to_string(out.join("reports/sweep_plot.dat")).unwrap();
    assert_eq!(plot.lines().next(), Some("mode,x,y,err"));
    assert_eq!(plot.lines().count(), 19);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");

    fs::write(&cfg, "[train]\nbatch_sise = 12\n").unwrap();
    let o = ciql(dir.path(), &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.batch_sise"));

    fs::write(&cfg, "[env]\nstep_size = 0.5\n").unwrap();
    let o = ciql(dir.path(), &["--config", cfg.to_str().unwrap(), "gen-demos"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("env.step_size"));

    let o = ciql(dir.path(), &["score", "--theta-n", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("confidence.theta_n_deg"));

    let o = ciql(dir.path(), &["sweep", "--modes", "ciql-b"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep.modes"));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = ciql(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset.jsonl"));
}

#[test]
fn dataset_from_another_environment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[env]\nmax_steps = 60\n").unwrap();
    ok(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "gen-demos", "--n", "2"],
    );
    let o = ciql(dir.path(), &["train", "--steps", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_combine_and_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[confidence]\ntheta_n_deg = 40\n[train]\ntotal_steps = 50\neval_episodes = 5\neval_seeds = 1\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(
        dir.path(),
        &["--config", c, "gen-demos", "--n", "2", "--noise-p", "0.1"],
    );
    ok(dir.path(), &["--config", c, "--seed", "7", "train", "--mode", "iq"]);
    let echo = fs::read_to_string(dir.path().join("config/train.toml")).unwrap();
    assert!(echo.contains("theta_n_deg = 40.0"));
    assert!(echo.contains("total_steps = 50"));
    assert!(echo.contains("seed = 7"));
    assert!(echo.contains("mode = \"iq\""));
}

#[test]
fn oracle_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["oracle"]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert!(dir.path().join("reports/oracle.txt").exists());
}
