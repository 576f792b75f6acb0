use std::path::Path;
use std::process::{Command, Output};

fn dualbridge(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualbridge"))
        .args(args)
        .env("DUALBRIDGE_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn dumped(args: &[&str], dir: &Path) -> serde_json::Value {
    let o = dualbridge(args, dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json config")
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dualbridge(&[], dir.path()).status.code(), Some(2));
    assert_eq!(dualbridge(&["--no-such-flag", "train"], dir.path()).status.code(), Some(2));
    assert_eq!(dualbridge(&["--set", "schedule.bogus=1", "train"], dir.path()).status.code(), Some(2));
    let missing = dir.path().join("nope.dbck");
    let o = dualbridge(
        &["transfer", "--source-ckpt", missing.to_str().unwrap(), "--target-ckpt", missing.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("source_ckpt"));
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualbridge(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    for sub in ["synth-data", "train", "transfer", "cycle-check", "sample-shared", "eval", "cycle-study"] {
        assert!(String::from_utf8_lossy(&o.stdout).contains(sub), "{sub}");
    }
}

#[test]
fn flags_override_config_file_and_set_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    std::fs::write(&ini, "seed = 4\n[schedule]\nsteps = 50\nrho = 7\n").unwrap();
    let ini = ini.to_str().unwrap();

    let v = dumped(&["--config", ini, "--dump-config", "train"], dir.path());
    assert_eq!(v["schedule"]["n_steps"], 50);
    assert_eq!(v["schedule"]["rho"], 7.0);
    assert_eq!(v["seed"], 4);

    let v = dumped(&["--config", ini, "--steps", "100", "--dump-config", "train"], dir.path());
    assert_eq!(v["schedule"]["n_steps"], 100);
    assert_eq!(v["schedule"]["rho"], 7.0);

    let v = dumped(&["--config", ini, "--steps", "100", "--set", "steps=30", "--dump-config", "train"], dir.path());
    assert_eq!(v["schedule"]["n_steps"], 30);
}

#[test]
fn default_output_root_comes_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let v = dumped(&["--dump-config", "synth-data"], dir.path());
    assert_eq!(v["out"].as_str().unwrap(), dir.path().join("synth-data").to_str().unwrap());
}

#[test]
fn invalid_schedule_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualbridge(&["--sigma-min", "5", "--sigma-max", "1", "convergence-study", "--samples", "10"], dir.path());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn mismatched_channels_fail_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    for (name, bands) in [("wide", "32"), ("narrow", "16")] {
        let o = dualbridge(
            &["--seed", "1", "--set", &format!("codec.n_bands={bands}"), "--out", &p(name), "synth-data", "--instrument", "flute", "--clips", "6"],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let o = dualbridge(
            &["--steps", "12", "--out", &p(&format!("{name}-ckpt")), "train", "--instrument", "flute", "--train-steps", "3", "--dataset", &p(name)],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = dualbridge(
        &[
            "--steps",
            "12",
            "--out",
            &p("t"),
            "transfer",
            "--source-ckpt",
            &p("wide-ckpt/flute.dbck"),
            "--target-ckpt",
            &p("narrow-ckpt/flute.dbck"),
            "--input",
            &p("wide/clips"),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cycle_check_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let o = dualbridge(args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["--seed", "2", "--out", &p("data"), "synth-data", "--instrument", "flute", "--instrument", "violin", "--clips", "6"]);
    for inst in ["flute", "violin"] {
        run(&["--steps", "12", "--out", &p("ckpt"), "train", "--instrument", inst, "--train-steps", "3", "--dataset", &p("data")]);
    }
    run(&[
        "--steps",
        "12",
        "--out",
        &p("cyc"),
        "cycle-check",
        "--source-ckpt",
        &p("ckpt/flute.dbck"),
        "--target-ckpt",
        &p("ckpt/violin.dbck"),
        "--input",
        &p("data/clips/flute-00000.dbcl"),
    ]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cyc/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "cycle-check");
    assert!(dir.path().join("cyc/cycle_report.csv").exists());
}
