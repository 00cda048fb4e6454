use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn corc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corc")).args(args).output().expect("run corc")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn calibrate_mean_matches_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    let losses = write(dir.path(), "l.txt", "# two indicators\nstep 0 0.3:1\nstep 0 0.7:1\n");
    let out = corc(&["calibrate", "--losses", &losses, "--alpha", "0.5", "--eps", "1e-12"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["method"], "mean");
    // h = (1 + #{q < lambda}) / 3 <= 0.5 allows no jump: lambda_hat = 0.3.
    assert!((v["lambda_hat"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(v["feasible"], true);
}

#[test]
fn calibrate_cvar_modes() {
    let dir = tempfile::tempdir().unwrap();
    let losses = write(dir.path(), "l.txt", "linear 0.4\nlinear -0.3\nlinear 0.9\nlinear 0.1\n");
    let holdout = write(dir.path(), "h.txt", "linear 0.5\nlinear -0.2\nlinear 0.8\nlinear 0.0\nlinear 0.3\n");
    let base = ["calibrate", "--losses", losses.as_str(), "--bound", "linear 1", "--alpha", "0.8", "--delta", "0.5"];
    let with = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        corc(&args)
    };
    let fixed = json(&with(&["--t", "0.2"]));
    let tuned = json(&with(&["--tune-t", &holdout]));
    let joint = json(&with(&["--joint"]));
    assert_eq!(fixed["method"], "cvar");
    assert_eq!(joint["method"], "cvar_joint");
    assert!(joint["lambda_hat"].as_f64().unwrap() >= fixed["lambda_hat"].as_f64().unwrap() - 1e-9);
    assert!(tuned["lambda_hat"].as_f64().unwrap() >= 0.0);
    // Outside the window the guard returns lambda_min.
    let guarded = json(&with(&["--t", "0.9"]));
    assert_eq!(guarded["lambda_hat"], 0.0);
    assert_eq!(guarded["feasible"], false);
    assert!(!with(&[]).status.success());
}

#[test]
fn calibrate_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.txt", "step 0 0.3:1\nstep zero\n");
    let out = corc(&["calibrate", "--losses", &bad, "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let decreasing = write(dir.path(), "dec.txt", "linear -1\n");
    assert_eq!(corc(&["calibrate", "--losses", &decreasing, "--alpha", "0.5"]).status.code(), Some(2));
}

#[test]
fn validate_writes_report_and_exits_on_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("report.csv");
    let out = corc(&[
        "validate", "--task", "synthetic", "--risk", "mean", "--alpha", "0.2", "--trials", "1000", "--n-cal", "30",
        "--out", out_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(&out_csv).unwrap();
    assert_eq!(rows.lines().count(), 1001);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_csv.with_extension("json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["n_trials"], 1000);

    let again = dir.path().join("again.csv");
    corc(&[
        "validate", "--task", "synthetic", "--risk", "mean", "--alpha", "0.2", "--trials", "1000", "--n-cal", "30",
        "--out", again.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&out_csv).unwrap(), fs::read(&again).unwrap());

    let few = corc(&["validate", "--task", "synthetic", "--risk", "mean", "--alpha", "0.2", "--trials", "10", "--out", again.to_str().unwrap()]);
    assert_eq!(few.status.code(), Some(2));
    let no_delta = corc(&["validate", "--task", "storage", "--risk", "cvar", "--alpha", "5", "--out", again.to_str().unwrap()]);
    assert!(!no_delta.status.success());
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let path = dir.path().join(name);
        let output = Command::new(env!("CARGO_BIN_EXE_corc"))
            .env("CORC_THREADS", threads)
            .args(["validate", "--task", "storage", "--risk", "cvar", "--delta", "0.9", "--alpha", "5", "--n-cal", "50"])
            .args(["--out", path.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(output.status.success());
        fs::read(path).unwrap()
    };
    assert_eq!(run("1", "a.csv"), run("4", "b.csv"));
}

#[test]
fn train_seg_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "seg.toml",
        "[seg]\nn_train = 60\nn_cal = 40\nn_test = 60\n\n[train]\nepochs = 2\nbatch_size = 20\nlearning_rate = 0.05\n",
    );
    let out_dir = dir.path().join("run");
    let out = corc(&["train", "--task", "seg", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["trained"]["mean_cost"].is_number());
    let outcome: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("outcome.json")).unwrap()).unwrap();
    assert_eq!(outcome["epoch_costs"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(out_dir.join("epochs.csv")).unwrap().lines().count(), 3);
}

#[test]
fn train_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bad.toml", "[train]\nepochz = 2\n");
    let out = corc(&["train", "--task", "storage", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "sweep.toml", "values = [2.0]\nseeds = [0]\nn_cal = 50\n");
    let out_csv = dir.path().join("sweep.csv");
    let out = corc(&["sweep", "--kind", "t", "--config", &config, "--out", out_csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&out_csv).unwrap().lines().count(), 2);

    let gen_dir = dir.path().join("data");
    let out = corc(&["generate", "--task", "storage", "--seed", "3", "--out", gen_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let header = fs::read_to_string(gen_dir.join("cal.csv")).unwrap();
    assert!(header.starts_with("x0,x1,x2,x3,price"));
    assert_eq!(header.lines().count(), 401);
}
