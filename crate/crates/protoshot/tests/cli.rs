use std::path::Path;
use std::process::{Command, Output};

use protoshot::read_report;

fn protoshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoshot"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_eval_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pool.emb");
    let report = dir.path().join("report.json");
    ok(&protoshot(&[
        "synth",
        "--out",
        s(&data),
        "--classes",
        "8",
        "--per-class",
        "20",
        "--dim",
        "16",
        "--mean-scale",
        "10",
        "--sigma",
        "0.1",
        "--seed",
        "3",
    ]));
    assert!(dir.path().join("pool.emb.labels.txt").exists());
    let stdout = ok(&protoshot(&[
        "eval",
        "--data",
        s(&data),
        "--ways",
        "5",
        "--shots",
        "1",
        "--queries",
        "5",
        "--tasks",
        "4",
        "--seed",
        "9",
        "--proto",
        "mean",
        "--mask",
        "off",
        "--out",
        s(&report),
    ]));
    assert_eq!(stdout.trim(), "100.00% ± 0.00% (4 tasks)");
    let r = read_report(&report).unwrap();
    assert_eq!(r.per_task_accuracy, vec![1.0; 4]);
    assert!(!r.config.pipeline.mask.enabled);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "synthetic = \"6,12,8,3.0,1.0\"\nways = 3\nshots = 2\nqueries = 4\ntasks = 3\nproto_epochs = 20\nseed = 5\n",
    )
    .unwrap();
    let report = dir.path().join("r.json");
    let stdout = ok(&protoshot(&[
        "eval",
        "--config",
        s(&cfg),
        "--shots",
        "3",
        "--compare",
        "--out",
        s(&report),
    ]));
    assert!(stdout.contains("(3 tasks)"));
    assert!(stdout.contains("trained - mean:"));
    let r = read_report(&report).unwrap();
    assert_eq!(
        (r.config.pipeline.n_ways, r.config.pipeline.k_shots),
        (3, 3)
    );
    assert_eq!(r.config.seed, 5);
    assert!(r.strategy_delta.is_some());
}

#[test]
fn reports_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let path = dir.path().join(name);
        ok(&protoshot(&[
            "eval",
            "--synthetic",
            "10,20,16,3,1.5",
            "--tasks",
            "8",
            "--seed",
            "42",
            "--proto-epochs",
            "50",
            "--threads",
            threads,
            "--out",
            s(&path),
        ]));
        read_report(&path).unwrap()
    };
    let a = run("1", "a.json");
    let b = run("4", "b.json");
    assert_eq!(a.without_wall_time(), b.without_wall_time());
}

#[test]
fn gradcheck_exit_status() {
    let out = ok(&protoshot(&["gradcheck", "--trials", "3"]));
    assert!(out.contains("head cross-entropy"));
    let strict = protoshot(&["gradcheck", "--trials", "1", "--tolerance", "1e-30"]);
    assert!(!strict.status.success());
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.emb");
    std::fs::write(&bad, b"EMB1\x04\0\0\0\x02\0\0\0\x01\0\0\0").unwrap();
    let out = protoshot(&[
        "eval",
        "--data",
        s(&bad),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte 16"));
    let out = protoshot(&[
        "eval",
        "--data",
        "x",
        "--synthetic",
        "1,1,1,1,1",
        "--out",
        "r.json",
    ]);
    assert!(!out.status.success());
}
