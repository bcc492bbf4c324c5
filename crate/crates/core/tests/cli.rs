use std::process::Command;

fn vps() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vps"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn verify_prints_a_report() {
    let out = vps().args(["verify", "42 m", "40 m"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["losses"]["numeric"], 4.0);
    assert_eq!(v["losses"]["unit"], 0.0);
}

#[test]
fn run_honours_flags_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("run.tsv");
    let out = vps()
        .env("VPS_TRAIN_STEPS", "5")
        .env("VPS_NUM_PROMPTS", "2")
        .args(["run", "--seed", "3", "--iterations", "2", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 + 1);
    assert!(dir.path().join("run.jsonl").exists());
}

#[test]
fn bad_inputs_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "seed = 1\norder = 2\n").unwrap();
    let out = vps().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = vps().env("VPS_NOT_A_KEY", "1").args(["verify", "1", "1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("VPS_NOT_A_KEY"));

    let out = vps().args(["bench", "--reps", "3"]).output().unwrap();
    assert!(!out.status.success());

    let out = vps().args(["run", "--filter-fraction", "0"]).output().unwrap();
    assert!(!out.status.success());
}
