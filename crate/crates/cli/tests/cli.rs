use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn assoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_assoc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(path: &Path, data: &Path, extra: &str) {
    let text = format!(
        "suite = dfd\nseed = 1\nepochs = 1\nbatch = 4\ntrain_size = 8\ntest_size = 4\nfisher_samples = 4\nmapper_steps = 4\ndata_dir = {}\n{extra}",
        data.display()
    );
    fs::write(path, text).unwrap();
}

#[test]
fn generate_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = assoc(&[
        "gen-data",
        "--suite",
        "dfd",
        "--out",
        data.to_str().unwrap(),
        "--train",
        "8",
        "--test",
        "4",
        "--seed",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(data.join("task4/manifest.tsv").exists());

    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &data, "");
    let run_dir = dir.path().join("run");
    let out = assoc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "assoc",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "config.snapshot",
        "metrics.csv",
        "forgetting.csv",
        "accounting.csv",
    ] {
        assert!(run_dir.join(file).exists(), "{file}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "run_id,method,suite,tasks_trained,eval_task,epoch,psnr_db,ssim,l_mse,l_adv,l_feature,wall_s,stored_bytes\n"
    ));

    let out = assoc(&[
        "report",
        "--in",
        run_dir.to_str().unwrap(),
        "--format",
        "md",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("| tasks | T1 | T2 | T3 | T4 | AVG | stored bytes |"),
        "{text}"
    );

    let out = assoc(&[
        "report",
        "--in",
        run_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(String::from_utf8(out.stdout).unwrap().lines().count() == 2);
}

#[test]
fn sweep_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(assoc(&[
        "gen-data",
        "--suite",
        "dfd",
        "--out",
        data.to_str().unwrap(),
        "--train",
        "8",
        "--test",
        "4"
    ])
    .status
    .success());
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &data, "method = assoc\n");
    let out_dir = dir.path().join("sweep");
    let out = assoc(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "lambda_prime",
        "--values",
        "0,5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let curve = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "suite = dfd\nlearning_rate = 1\n").unwrap();
    let out = assoc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    fs::write(&cfg, "suite = dfd\nmethod = tl\nmask_heuristics = true\n").unwrap();
    let out = assoc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn failed_runs_give_a_non_zero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(assoc(&[
        "gen-data",
        "--suite",
        "dfd",
        "--out",
        data.to_str().unwrap(),
        "--train",
        "8",
        "--test",
        "4"
    ])
    .status
    .success());
    let cfg = dir.path().join("nan.cfg");
    write_config(&cfg, &data, "method = tl\nlr = 1e300\n");
    let out_dir = dir.path().join("suite");
    let out = assoc(&[
        "suite",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(out_dir.join("failures.txt").exists());
    assert!(out_dir.join("metrics.csv").exists());
}
