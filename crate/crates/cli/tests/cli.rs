use std::path::Path;
use std::process::{Command, Output};

fn pac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pac"))
        .args(args)
        .env_remove("PAC_SEED")
        .output()
        .expect("run pac")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn short_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--algo",
        "pac",
        "--env",
        "matrix_game",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "total_env_steps=60",
        "--set",
        "batch_size=8",
        "--set",
        "buffer_capacity=32",
        "--set",
        "eval_episodes=4",
    ];
    args.extend_from_slice(extra);
    pac(&args)
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pac(&["train", "--algo", "nosuch", "--out", out]);
    assert_eq!(code(&o), 2);
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("pac") && msg.contains("ow_qmix"), "{msg}");
    assert_eq!(code(&pac(&["train", "--env", "nosuch", "--out", out])), 2);
    assert_eq!(code(&pac(&["train", "--out", out, "--set", "no_such_key=1"])), 2);
    assert_eq!(
        code(&pac(&["train", "--algo", "qmix", "--variant", "no_info", "--out", out])),
        2
    );
    assert_eq!(code(&pac(&["bogus"])), 2);
}

#[test]
fn train_writes_artifacts_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = short_train(d, &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["metrics.csv", "final.ckpt", "config.resolved"] {
            assert!(d.join(f).is_file(), "{f}");
        }
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "metrics.csv"), read(&b, "metrics.csv"));
    assert_eq!(read(&a, "final.ckpt"), read(&b, "final.ckpt"));

    let ckpt = a.join("final.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let o = pac(&["eval", "--ckpt", ckpt, "--episodes", "8"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("return_mean = "));
    let o = pac(&["eval", "--ckpt", ckpt, "--episodes", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "episodes = 0");
    assert_eq!(code(&pac(&["eval", "--ckpt", ckpt, "--env", "predator_prey"])), 1);

    let o = pac(&["report", "--ckpt", ckpt]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(pac_trainer::MatrixGameReport::parse(&text).is_ok());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = Command::new(env!("CARGO_BIN_EXE_pac"))
        .args([
            "train",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "total_env_steps=2",
            "--set",
            "eval_episodes=1",
        ])
        .env("PAC_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = std::fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(cfg.contains("seed = 42"), "{cfg}");
}

#[test]
fn report_rejects_predator_prey() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pp");
    let o = pac(&[
        "train",
        "--env",
        "predator_prey",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "total_env_steps=1",
        "--set",
        "eval_episodes=0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        code(&pac(&["report", "--ckpt", out.join("final.ckpt").to_str().unwrap()])),
        2
    );
    assert_eq!(
        code(&pac(&[
            "report",
            "--ckpt",
            dir.path().join("missing.ckpt").to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let o = pac(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    let o = pac(&["gradcheck", "--negative-control"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
