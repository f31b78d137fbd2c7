use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn damdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_damdp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn snapshot(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    assert_eq!(
        damdp(&["validate", "--model", "example1"]).status.code(),
        Some(0)
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"num_states": 2, "num_actions": 1, "discount": 0.9,
            "transition": [[[0.5, 0.5], [0.3, 0.6]]], "reward": [[1.0], [0.0]]}"#,
    )
    .unwrap();
    let out = damdp(&["validate", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("x=1, u=0"), "{err}");

    let out = damdp(&["validate", "--model", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn nominal_solve_is_repeatable_and_exports_grids() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        assert!(damdp(&["solve-nominal", "--out", s(&a)]).status.success());
        snapshots.push(snapshot(&a, &["nominal.json", "nominal.csv"]));
    }
    assert_eq!(snapshots[0], snapshots[1]);
    assert_eq!(
        read_json(&a.join("nominal.json"))["policy"],
        serde_json::json!([0, 0, 1])
    );

    let g = dir.path().join("g");
    assert!(
        damdp(&["solve-nominal", "--model", "gridworld", "--out", s(&g)])
            .status
            .success()
    );
    let grid = std::fs::read_to_string(g.join("value_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 7);
    assert!(grid.lines().all(|l| l.split(',').count() == 7));
    // the absorbing target holds the largest value, 1 / (1 − 0.95)
    let top_right: f64 = grid
        .lines()
        .next()
        .unwrap()
        .split(',')
        .next_back()
        .unwrap()
        .parse()
        .unwrap();
    assert!((top_right - 20.0).abs() < 1e-8);
}

#[test]
fn single_state_value_is_reward_over_one_minus_discount() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("one.json");
    std::fs::write(
        &model,
        r#"{"num_states": 1, "num_actions": 2, "discount": 0.9,
            "transition": [[[1.0]], [[1.0]]], "reward": [[2.0, 1.0]]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    assert!(
        damdp(&["solve-nominal", "--model", s(&model), "--out", s(&out)])
            .status
            .success()
    );
    let v = read_json(&out.join("nominal.json"))["values"][0]
        .as_f64()
        .unwrap();
    assert!((v - 20.0).abs() < 1e-8);
}

#[test]
fn augmented_solve_matches_nominal_with_nominal_weights() {
    let dir = tempfile::tempdir().unwrap();
    let n = dir.path().join("n");
    let a = dir.path().join("a");
    assert!(damdp(&["solve-nominal", "--out", s(&n)]).status.success());
    let out = damdp(&[
        "solve-augmented",
        "--wn",
        "1",
        "--wa",
        "0",
        "--grid-res",
        "10",
        "--tol",
        "1e-9",
        "--out",
        s(&a),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let nominal = read_json(&n.join("nominal.json"));
    let table = read_json(&a.join("augmented.json"));
    for x in 0..3 {
        let v = nominal["values"][x].as_f64().unwrap();
        for w in table["values"][x].as_array().unwrap() {
            assert!((w.as_f64().unwrap() - v).abs() < 1e-6);
        }
    }
    let meta = read_json(&a.join("augmented.meta.json"));
    assert_eq!(meta["inputs"]["grid"]["grid_res"], 10);
    assert_eq!(meta["inputs"]["weights"]["wn"], 1.0);
}

#[test]
fn augmented_solve_converges_and_refuses_large_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = damdp(&["solve-augmented", "--out", s(dir.path())]);
    assert!(out.status.success());
    assert!(
        read_json(&dir.path().join("augmented.json"))["residual"]
            .as_f64()
            .unwrap()
            <= 1e-6
    );

    let out = damdp(&[
        "solve-augmented",
        "--model",
        "gridworld",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("49") && err.contains("receding-horizon"),
        "{err}"
    );
}

fn summary(dir: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["simulate", "--out", s(dir)];
    args.extend_from_slice(extra);
    let out = damdp(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    read_json(&dir.join("summary.json"))
}

#[test]
fn simulation_summaries_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--seeds", "20", "--steps", "300"];
    let nominal = summary(
        &dir.path().join("n"),
        &[&common[..], &["--controller", "nominal"]].concat(),
    );
    assert_eq!(nominal["summary"]["runs"], 20);
    assert!(nominal["summary"]["mean_avg_reward"].is_f64());
    let rho = summary(
        &dir.path().join("r"),
        &[
            &common[..],
            &[
                "--controller",
                "rho",
                "--wn",
                "0",
                "--wa",
                "1",
                "--horizon",
                "3",
            ],
        ]
        .concat(),
    );
    assert!(
        rho["summary"]["mean_avg_detection"].as_f64().unwrap()
            < nominal["summary"]["mean_avg_detection"].as_f64().unwrap()
    );
    assert_eq!(rho["inputs"]["horizon"]["horizon"], 3);
    assert_eq!(rho["inputs"]["weights"]["wa"], 1.0);
}

#[test]
fn one_seed_one_step_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    summary(dir.path(), &["--seeds", "1", "--steps", "1", "--beliefs"]);
    let csv = std::fs::read_to_string(dir.path().join("seed_0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("seed_0.beliefs.csv").exists());
}

#[test]
fn repeated_simulations_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--seeds",
        "3",
        "--steps",
        "40",
        "--seed-base",
        "17",
        "--controller",
        "augmented",
        "--grid-res",
        "4",
        "--jobs",
        "2",
    ];
    let files = [
        "seed_17.csv",
        "seed_18.csv",
        "seed_19.csv",
        "seed_19.meta.json",
        "summary.json",
    ];
    summary(dir.path(), &args);
    let first = snapshot(dir.path(), &files);
    summary(dir.path(), &args);
    assert!(first == snapshot(dir.path(), &files));
}

#[test]
fn gridworld_simulation_starts_at_the_start_cell() {
    let dir = tempfile::tempdir().unwrap();
    let sum = summary(
        dir.path(),
        &[
            "--model",
            "gridworld",
            "--controller",
            "nominal",
            "--seeds",
            "2",
            "--steps",
            "60",
        ],
    );
    for run in sum["runs"].as_array().unwrap() {
        assert_eq!(run["initial_state"], 42);
        assert_eq!(run["reached_target"], true);
    }
}

#[test]
fn plan_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    let out = damdp(&[
        "plan",
        "--x0",
        "1",
        "--belief",
        "0.2,0.3,0.5",
        "--wn",
        "0.5",
        "--wa",
        "0.5",
        "--horizon",
        "2",
        "--out",
        s(&path),
    ]);
    assert!(out.status.success());
    let plan = read_json(&path);
    let evals = plan["result"]["evaluations"].as_array().unwrap();
    assert_eq!(evals.len(), 4);
    let best = evals
        .iter()
        .map(|e| e["objective"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(plan["result"]["best_objective"].as_f64().unwrap(), best);
    assert_eq!(plan["inputs"]["x0"], 1);

    let out = damdp(&["plan", "--belief", "0.5,0.6,0.1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = damdp(&["plan", "--model", "gridworld", "--x0", "99"]);
    assert_eq!(out.status.code(), Some(2));
}
