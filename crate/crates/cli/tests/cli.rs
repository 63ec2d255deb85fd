use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn slr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = slr(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    slr(args, cwd).status.code().expect("exited normally")
}

fn planted(dir: &Path) {
    ok(&["synth", "--kind", "planted", "--out", "p", "--seed", "3"], dir);
}

#[test]
fn planted_layer_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    planted(dir);

    let line = ok(
        &[
            "decompose",
            "--config",
            "p/config.json",
            "--out",
            "o",
            "--max-iter",
            "40",
        ],
        dir,
    );
    let v: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["shape"], serde_json::json!([16, 32]));
    assert_eq!(v["iterations"], 40);
    assert!(dir.join("o/layer.slrl").is_file());

    let inspected: Value = serde_json::from_str(&ok(&["inspect", "o/layer.slrl"], dir)).unwrap();
    assert_eq!(inspected["cr"], v["cr"]);
    let npy: Value = serde_json::from_str(&ok(&["inspect", "p/layer.npy"], dir)).unwrap();
    assert_eq!(npy["finite"], true);

    let paths = ok(&["export-csr", "--layer", "o/layer.slrl", "--out", "csr/nested"], dir);
    assert_eq!(paths.lines().count(), 3);
    for p in paths.lines() {
        assert!(dir.join(p).is_file(), "{p}");
    }

    let bench = ok(
        &[
            "bench",
            "--layer",
            "o/layer.slrl",
            "--weights",
            "p/layer.npy",
            "--columns",
            "64",
            "--repetitions",
            "5",
            "--out",
            "b",
        ],
        dir,
    );
    let report: Value = serde_json::from_str(bench.trim()).unwrap();
    assert_eq!(report["repetitions"], 5);
    assert_eq!(fs::read_to_string(dir.join("b/bench.jsonl")).unwrap(), bench);
}

#[test]
fn stack_pipeline_writes_a_loadable_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--kind", "stack", "--out", "s", "--seed", "1"], dir);
    for strategy in ["symmetric", "asymmetric"] {
        let out = format!("run_{strategy}");
        let lines = ok(
            &[
                "pipeline",
                "--config",
                "s/config.json",
                "--strategy",
                strategy,
                "--max-iter",
                "20",
                "--out",
                &out,
            ],
            dir,
        );
        assert_eq!(lines.lines().count(), 3);
        let summary: Value = serde_json::from_str(&ok(&["inspect", &out], dir)).unwrap();
        assert_eq!(summary["layers"].as_array().unwrap().len(), 3);
    }
    let bench = ok(
        &[
            "bench",
            "--run",
            "run_asymmetric",
            "--config",
            "s/config.json",
            "--repetitions",
            "5",
        ],
        dir,
    );
    assert_eq!(bench.lines().count(), 3);
}

#[test]
fn overrides_change_the_result() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    planted(dir);
    let base = ["decompose", "--config", "p/config.json", "--max-iter", "40"];
    let run = |extra: &[&str], out: &str| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out]);
        serde_json::from_str::<Value>(ok(&args, dir).trim()).unwrap()
    };
    let plain = run(&[], "a");
    let heavy = run(&["--lambda1", "2", "--lambda2", "5.5"], "b");
    assert!(heavy["cr"]["cr_total"].as_f64() < plain["cr"]["cr_total"].as_f64());
    let sparse = run(&["--mode", "sparse-only"], "c");
    assert_eq!(sparse["rank"], 0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    planted(dir);
    for out in ["a", "b"] {
        ok(
            &[
                "decompose",
                "--config",
                "p/config.json",
                "--max-iter",
                "30",
                "--seed",
                "9",
                "--out",
                out,
            ],
            dir,
        );
    }
    assert_eq!(
        fs::read(dir.join("a/layer.slrl")).unwrap(),
        fs::read(dir.join("b/layer.slrl")).unwrap()
    );
}

#[test]
fn compare_writes_a_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    planted(dir);
    let csv = ok(
        &[
            "compare-nl",
            "--config",
            "p/config.json",
            "--max-iter",
            "10",
            "--out",
            "c",
        ],
        dir,
    );
    assert_eq!(
        fs::read_to_string(dir.join("c/compare_layer.csv")).unwrap().trim_end(),
        csv.trim_end()
    );
    assert!(csv.lines().count() > 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    planted(dir);
    // configuration problems
    assert_eq!(
        code(&["decompose", "--config", "p/config.json", "--lambda1", "-1"], dir),
        2
    );
    assert_eq!(
        code(&["decompose", "--config", "p/config.json", "--layer", "nope"], dir),
        2
    );
    assert_eq!(code(&["bench", "--layer", "x.slrl", "--repetitions", "3"], dir), 2);
    fs::write(dir.join("typo.json"), r#"{"layerz": []}"#).unwrap();
    assert_eq!(code(&["pipeline", "--config", "typo.json"], dir), 2);
    // I/O
    assert_eq!(code(&["pipeline", "--config", "missing.json"], dir), 4);
    assert_eq!(code(&["inspect", "nothing.slrl"], dir), 4);
    // numerical: a learning rate that blows up the inner solver
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(dir.join("p/config.json")).unwrap()).unwrap();
    cfg["defaults"]["hyperparams"]["sgd"] = serde_json::json!({"learning_rate": 1e6, "epochs": 10});
    fs::write(dir.join("p/bad.json"), cfg.to_string()).unwrap();
    assert_eq!(
        code(
            &["decompose", "--config", "p/bad.json", "--max-iter", "5", "--out", "o"],
            dir
        ),
        3
    );
}
