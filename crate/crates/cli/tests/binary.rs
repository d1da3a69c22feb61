use std::process::Command;

fn gnndm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnndm"))
}

#[test]
fn failure_exits_nonzero_with_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnndm().args(["eval", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(v["error"]["kind"], "missing-dependency");
    assert_eq!(v["error"]["stage"], "eval");
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "target_domain = 40\n").unwrap();
    let out = gnndm()
        .args(["gen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(v["error"]["kind"], "config");
}

#[test]
fn env_var_sets_output_dir_and_flag_wins() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let smoke = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");
    let ok = gnndm()
        .args(["gen", "--config", smoke])
        .env("GNNDM_OUT", env_dir.path())
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(env_dir.path().join("manifest.json").exists());
    let ok = gnndm()
        .args(["gen", "--config", smoke, "--out"])
        .arg(flag_dir.path())
        .env("GNNDM_OUT", env_dir.path())
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(flag_dir.path().join("manifest.json").exists());
}

#[test]
fn seed_flag_changes_the_dataset() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let smoke = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");
    for (d, s) in [(&a, "1"), (&b, "2")] {
        assert!(gnndm()
            .args(["gen", "--config", smoke, "--seed", s, "--out"])
            .arg(d.path())
            .status()
            .unwrap()
            .success());
    }
    assert_ne!(
        std::fs::read(a.path().join("dataset.bin")).unwrap(),
        std::fs::read(b.path().join("dataset.bin")).unwrap()
    );
}
