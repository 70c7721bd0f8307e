use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn marl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marl")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn zero_step_train_creates_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("d");
    let out = marl(&[
        "train",
        "--arch",
        "single",
        "--env",
        "pd_matrix.scenario_0",
        "--steps",
        "0",
        "--seed",
        "1",
        "--out",
        path(&run),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(run.join("checkpoint.majx").is_file());
    let config = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("env=pd_matrix.scenario_0"));
    assert!(config.contains("seed=1"));
}

#[test]
fn stored_config_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = marl(&[
        "train",
        "--arch",
        "sync",
        "--workers",
        "2",
        "--env",
        "rps_matrix.scenario_3",
        "--steps",
        "600",
        "--seed",
        "4",
        "--out",
        path(&a),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = marl(&["train", "--config", path(&a.join("config.txt")), "--out", path(&b)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("checkpoint.majx")).unwrap(),
        fs::read(b.join("checkpoint.majx")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("base.txt");
    fs::write(&cfg, "# base\narch=single\nenv=rps_matrix\nsteps=20\nseed=3\n").unwrap();
    let run = tmp.path().join("r");
    let out = marl(&["train", "--config", path(&cfg), "--seed", "9", "--out", path(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let snapshot = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(snapshot.contains("seed=9"));
    assert!(snapshot.contains("steps=20"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = marl(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));

    let run = tmp.path().join("w");
    let out = marl(&[
        "train",
        "--arch",
        "async",
        "--workers",
        "0",
        "--env",
        "rps_matrix",
        "--out",
        path(&run),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("num_workers"), "{}", stderr(&out));
    assert!(!run.exists(), "no work before config is valid");

    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "env=rps_matrix\nflavour=mint\n").unwrap();
    let out = marl(&["train", "--config", path(&cfg), "--out", path(&run)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

fn trained_checkpoint(dir: &Path) -> std::path::PathBuf {
    let run = dir.join("run");
    let out = marl(&[
        "train",
        "--env",
        "rps_matrix.scenario_0",
        "--steps",
        "0",
        "--out",
        path(&run),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    run.join("checkpoint.majx")
}

#[test]
fn evaluate_fans_out_over_seeds_and_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    let res = tmp.path().join("res");
    let out = marl(&[
        "evaluate",
        "--ckpt",
        path(&ckpt),
        "--scenario",
        "rps_matrix.scenario_0",
        "--episodes",
        "100",
        "--seeds",
        "1,2",
        "--out",
        path(&res),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_dir(&res).unwrap().count(), 2);

    let all = tmp.path().join("all");
    let out = marl(&[
        "evaluate",
        "--ckpt",
        path(&ckpt),
        "--scenario",
        "rps_matrix",
        "--all-scenarios",
        "--episodes",
        "5",
        "--out",
        path(&all),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    // Substrate row plus five registry scenarios.
    assert_eq!(fs::read_dir(&all).unwrap().count(), 6);
    let text = fs::read_to_string(all.join("rps_matrix.seed0.csv")).unwrap();
    assert!(text.starts_with("scenario,label,seed,episodes,mean_focal_return\nrps_matrix,run,0,5,"));
}

#[test]
fn evaluate_with_missing_checkpoint_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let res = tmp.path().join("res");
    let out = marl(&[
        "evaluate",
        "--ckpt",
        path(&tmp.path().join("none.majx")),
        "--scenario",
        "rps_matrix.scenario_0",
        "--out",
        path(&res),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!res.exists());
}

#[test]
fn aggregate_prints_table_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, scenario: &str, seed: u64, mean: f64| {
        let p = tmp.path().join(name);
        fs::write(
            &p,
            format!(
                "scenario,label,seed,episodes,mean_focal_return\n{scenario},ppo,{seed},1,{mean}\nepisode,0,{mean}\n"
            ),
        )
        .unwrap();
        p
    };
    let files = [
        write("a.csv", "rps_matrix.scenario_0", 1, 3.0),
        write("b.csv", "rps_matrix.scenario_0", 2, 5.0),
        write("c.csv", "rps_matrix", 1, 0.0),
    ];
    let out_dir = tmp.path().join("table");
    let mut args = vec!["aggregate", "--out", path(&out_dir)];
    args.extend(files.iter().map(|p| path(p)));
    let out = marl(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[1].starts_with("Substrate"));
    assert!(
        lines[2].starts_with("Scenario 0") && lines[2].ends_with("4.00"),
        "{stdout}"
    );
    let csv = fs::read_to_string(out_dir.join("table.csv")).unwrap();
    assert_eq!(csv, "row,ppo\nSubstrate,0\nScenario 0,4\n");

    let out = marl(&["aggregate", "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no results"));
}
