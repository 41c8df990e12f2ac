use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn popo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popo"))
        .args(args)
        .current_dir(cwd)
        .env_remove("POPO_SEED")
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const TINY: &[&str] = &[
    "--batch-size",
    "16",
    "--quantiles",
    "4",
    "--actor-hidden",
    "16",
    "--critic-hidden",
    "16",
    "--vae-hidden",
    "16",
    "--eval-episodes",
    "2",
];

fn gen(dir: &Path, kind: &str, n: &str, out: &str) -> Value {
    json_stdout(&popo(
        &[
            "gen-data",
            "--env",
            "pointmass-v0",
            "--kind",
            kind,
            "--n",
            n,
            "--seed",
            "1",
            "--out",
            out,
        ],
        dir,
    ))
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--dataset",
        "d.popo",
        "--steps",
        "30",
        "--eval-interval",
        "10",
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    popo(&args, dir)
}

#[test]
fn gen_data_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let random = gen(dir.path(), "random", "1000", "r.popo");
    let expert = gen(dir.path(), "expert", "1000", "e.popo");
    assert!(expert["mean_return"].as_f64().unwrap() > random["mean_return"].as_f64().unwrap());

    let summary = json_stdout(&popo(
        &["dataset-inspect", "--dataset", "e.popo"],
        dir.path(),
    ));
    assert_eq!(summary["count"], 1000);
    assert_eq!(summary["content_hash"], expert["content_hash"]);
    assert_eq!(summary["columns"].as_array().unwrap().len(), 2 * 4 + 2 + 2);
    assert_eq!(summary["manifest"]["policy"], "expert");

    let again = gen(dir.path(), "expert", "1000", "e2.popo");
    assert_eq!(
        std::fs::read(dir.path().join("e.popo")).unwrap(),
        std::fs::read(dir.path().join("e2.popo")).unwrap()
    );
    assert_eq!(again["content_hash"], expert["content_hash"]);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env_seed: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_popo"));
        c.args([
            "gen-data",
            "--env",
            "pendulum-v0",
            "--kind",
            "random",
            "--n",
            "50",
            "--out",
            out,
        ])
        .current_dir(dir.path())
        .env_remove("POPO_SEED");
        if let Some(s) = env_seed {
            c.env("POPO_SEED", s);
        }
        json_stdout(&c.output().unwrap())
    };
    assert_eq!(run(Some("7"), "a.popo")["seed"], 7);
    assert_eq!(run(None, "b.popo")["seed"], 0);
}

#[test]
fn training_is_reproducible_and_logs_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "medium", "600", "d.popo");
    let a = json_stdout(&train(dir.path(), &["--out", "a", "--seed", "3"]));
    json_stdout(&train(dir.path(), &["--out", "b", "--seed", "3"]));
    assert_eq!(a["steps"], 30);

    let csv_a = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let csv_b = std::fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let lines: Vec<&str> = csv_a.lines().collect();
    assert_eq!(lines[0], popo::agent::CSV_HEADER);
    assert_eq!(lines.len(), 31);
    let eval_rows = lines[1..].iter().filter(|l| !l.ends_with(",,,,")).count();
    assert_eq!(eval_rows, 3);

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap())
            .unwrap();
    let ds = popo::data::Dataset::read(dir.path().join("d.popo")).unwrap();
    assert_eq!(manifest["dataset"]["content_hash"], ds.content_hash());
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config"]["max_steps"], 30);
    assert_eq!(manifest["final"]["steps"], 30);

    let e1 = json_stdout(&popo(
        &[
            "eval",
            "--checkpoint",
            "a/checkpoint.popo",
            "--episodes",
            "3",
        ],
        dir.path(),
    ));
    let e2 = json_stdout(&popo(
        &[
            "eval",
            "--checkpoint",
            "b/checkpoint.popo",
            "--episodes",
            "3",
        ],
        dir.path(),
    ));
    assert_eq!(e1, e2);
    assert_eq!(e1["returns"].as_array().unwrap().len(), 3);
    assert_eq!(e1["env_id"], "pointmass-v0");

    let c = json_stdout(&train(dir.path(), &["--out", "c", "--seed", "4"]));
    assert_ne!(c["final_eval"], a["final_eval"]);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "medium", "300", "d.popo");
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"variant": "td3", "dataset": "d.popo", "out_dir": "td3", "seed": 2, "max_steps": 1000, "batch_size": 16,
            "actor_hidden": 16, "critic_hidden": 16, "eval_interval": 10, "eval_episodes": 1}"#,
    )
    .unwrap();
    let out = json_stdout(&popo(
        &["train", "--config", "run.json", "--steps", "20"],
        dir.path(),
    ));
    assert_eq!(out["steps"], 20);
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("td3/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["variant"], "td3");
    assert_eq!(manifest["config"]["max_steps"], 20);
    let csv = std::fs::read_to_string(dir.path().join("td3/metrics.csv")).unwrap();
    // No VAE: its three columns stay empty.
    assert!(csv.lines().nth(1).unwrap().contains(",,,,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "medium", "300", "d.popo");
    let code = |out: Output| out.status.code().unwrap();

    assert_eq!(code(popo(&["frobnicate"], dir.path())), 2);
    assert_eq!(
        code(popo(
            &["gen-data", "--env", "cartpole", "--kind", "random", "--n", "5", "--out", "x"],
            dir.path()
        )),
        2
    );
    assert_eq!(code(train(dir.path(), &["--gamma", "1.0"])), 2);
    assert_eq!(code(train(dir.path(), &["--distortion", "cvar:0"])), 2);
    assert_eq!(
        code(popo(&["train", "--dataset", "missing.popo"], dir.path())),
        4
    );
    assert_eq!(
        code(popo(
            &["dataset-inspect", "--dataset", "missing.popo"],
            dir.path()
        )),
        4
    );

    std::fs::write(dir.path().join("junk.popo"), b"JUNKJUNKJUNK").unwrap();
    assert_eq!(
        code(popo(
            &["dataset-inspect", "--dataset", "junk.popo"],
            dir.path()
        )),
        4
    );

    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"dataset": "d.popo", "learning_rate": 1}"#,
    )
    .unwrap();
    assert_eq!(
        code(popo(&["train", "--config", "bad.json"], dir.path())),
        2
    );

    // Pendulum dataset cannot be evaluated on the point mass.
    assert_eq!(code(train(dir.path(), &["--env", "pendulum-v0"])), 2);
}

#[test]
fn numerical_failure_flushes_a_diagnostic_row() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "medium", "300", "d.popo");
    std::fs::write(
        dir.path().join("boom.json"),
        r#"{"dataset": "d.popo", "out_dir": "boom", "lr_critic": 1e30, "lr_actor": 1e30, "lr_vae": 1e30}"#,
    )
    .unwrap();
    let mut args = vec!["train", "--config", "boom.json", "--steps", "50"];
    args.extend_from_slice(TINY);
    let out = popo(&args, dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("boom/metrics.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.contains("NaN"), "{last}");
}

const MDP: &str = r#"{
    "S": 2, "A": 2, "reward_support": [0.0, 1.0], "gamma": 0.9, "rho0": [1.0, 0.0],
    "p": [
        [[[0.5, 0.0], [0.0, 0.5]], [[0.0, 0.0], [0.0, 1.0]]],
        [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]
    ]
}"#;

#[test]
fn gap_command() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mdp.json"), MDP).unwrap();
    std::fs::write(
        dir.path().join("t.json"),
        "[[0, 0, 0, 0], [0, 0, 1, 1], [0, 1, 1, 1], [1, 0, 0, 0], [1, 1, 0, 1]]",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("partial.json"),
        r#"{"transitions": [[0, 0, 0, 0], [1, 0, 0, 0]]}"#,
    )
    .unwrap();

    let r = json_stdout(&popo(
        &["gap", "--mdp", "mdp.json", "--transitions", "t.json"],
        dir.path(),
    ));
    let direct = r["delta_direct"].as_array().unwrap();
    let recursive = r["delta_recursive"].as_array().unwrap();
    for (d, c) in direct.iter().zip(recursive) {
        assert!((d.as_f64().unwrap() - c.as_f64().unwrap()).abs() < 1e-8);
    }
    assert!(r["max_abs_discrepancy"].as_f64().unwrap() < 1e-8);

    let uncovered = popo(
        &["gap", "--mdp", "mdp.json", "--transitions", "partial.json"],
        dir.path(),
    );
    assert_eq!(uncovered.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&uncovered.stderr).contains("no data"));

    let absorbed = json_stdout(&popo(
        &[
            "gap",
            "--mdp",
            "mdp.json",
            "--transitions",
            "partial.json",
            "--absorb-uncovered",
        ],
        dir.path(),
    ));
    assert_eq!(absorbed["absorbed_pairs"].as_array().unwrap().len(), 2);
}
