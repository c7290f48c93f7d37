use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sfdma(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sfdma"));
    cmd.args(args).current_dir(dir).env_remove("SFDMA_SEED");
    if let Some(s) = env_seed {
        cmd.env("SFDMA_SEED", s);
    }
    cmd.output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sfdma(dir.path(), &["--help"], None).status.code(), Some(0));
    assert_eq!(
        sfdma(dir.path(), &["--version"], None).status.code(),
        Some(0)
    );
    let unknown = sfdma(dir.path(), &["frobnicate"], None);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(
        sfdma(dir.path(), &["cdf", "--out", "x.csv", "--bogus"], None)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(sfdma(dir.path(), &["cdf"], None).status.code(), Some(1));
    let missing = sfdma(
        dir.path(),
        &["fit-abg", "--in", "nope.csv", "--out", "p.json"],
        None,
    );
    assert_eq!(missing.status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "[experiment]\ndraws = 0\n").unwrap();
    let bad = sfdma(
        dir.path(),
        &["cdf", "--config", "bad.toml", "--out", "c.csv"],
        None,
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn single_user_allocation_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("req.json"),
        r#"{"users":[{"alpha":95,"beta":0.5,"gamma":80,"tau":1.5,"eta":55,"gain_sq":1,"noise_var":0.5}]}"#,
    )
    .unwrap();
    let out = sfdma(
        dir.path(),
        &["allocate", "--in", "req.json", "--out", "alloc.json"],
        None,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("total=1.0"));
    let v = json(&dir.path().join("alloc.json"));
    assert_eq!(v["status"], "optimal");
    assert_eq!(v["total"], 1.0);
    assert_eq!(v["powers"], serde_json::json!([1.0]));
    assert!(v["config"].is_object());
}

#[test]
fn fitted_params_feed_allocate() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("sinr_db,phi\n");
    for db in [-20, -15, -10, -5, 0, 5, 10, 15, 20] {
        let s = 10f64.powf(db as f64 / 10.0);
        csv.push_str(&format!(
            "{db},{}\n",
            95.0 - 82.93 / (1.0 + (15.7 * s).powf(1.427))
        ));
    }
    fs::write(dir.path().join("s.csv"), csv).unwrap();
    assert!(sfdma(
        dir.path(),
        &["fit-abg", "--in", "s.csv", "--out", "p.json"],
        None
    )
    .status
    .success());
    let p = json(&dir.path().join("p.json"));
    for key in ["alpha", "beta", "gamma", "tau", "residual_rms", "n_samples"] {
        assert!(p.get(key).is_some(), "{key} missing");
    }
    assert!((p["alpha"].as_f64().unwrap() - 95.0).abs() < 0.01);

    let out = sfdma(
        dir.path(),
        &[
            "allocate", "--params", "p.json", "--params", "p.json", "--eta", "92", "--out",
            "a.json",
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = json(&dir.path().join("a.json"));
    assert_eq!(a["status"], "optimal");
    assert_eq!(a["powers"].as_array().unwrap().len(), 2);
}

#[test]
fn zeta_is_ignored_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("p.json"),
        r#"{"alpha":95,"beta":15.7,"gamma":82.93,"tau":1.427,"zeta":0.6338}"#,
    )
    .unwrap();
    let out = sfdma(
        dir.path(),
        &[
            "allocate", "--params", "p.json", "--eta", "92", "--out", "a.json",
        ],
        None,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("zeta"));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let seed_of = |file: &str| -> u64 {
        let text = fs::read_to_string(d.join(file)).unwrap();
        let line = text
            .lines()
            .next()
            .unwrap()
            .strip_prefix("# config: ")
            .unwrap()
            .to_string();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        v["config"]["experiment"]["seed"].as_u64().unwrap()
    };
    let run = |args: &[&str], env: Option<&str>| assert!(sfdma(d, args, env).status.success());

    run(&["cdf", "--draws", "200", "--out", "env.csv"], Some("41"));
    assert_eq!(seed_of("env.csv"), 41);
    run(
        &["cdf", "--draws", "200", "--seed", "5", "--out", "flag.csv"],
        Some("41"),
    );
    assert_eq!(seed_of("flag.csv"), 5);
    fs::write(d.join("c.toml"), "[experiment]\nseed = 9\n").unwrap();
    run(
        &[
            "cdf", "--draws", "200", "--config", "c.toml", "--out", "file.csv",
        ],
        Some("41"),
    );
    assert_eq!(seed_of("file.csv"), 9);
}

#[test]
fn train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.toml"),
        "[train]\nepochs = 3\n\n[experiment]\ntrials = 1\ntest_per_class = 10\n",
    )
    .unwrap();
    let ok = |args: &[&str]| {
        let out = sfdma(d, args, None);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&["train", "--config", "c.toml", "--out", "m"]);
    let history = fs::read_to_string(d.join("m/history.csv")).unwrap();
    assert_eq!(
        history.lines().nth(1),
        Some("epoch,loss,acc_user_0,acc_user_1")
    );
    assert_eq!(history.lines().count(), 2 + 3);

    ok(&[
        "report-orth",
        "--config",
        "c.toml",
        "--model",
        "m/model.json",
        "--out",
        "o.csv",
    ]);
    let orth = fs::read_to_string(d.join("o.csv")).unwrap();
    assert_eq!(orth.lines().nth(1), Some("user_a,user_b,cosine,angle_deg"));

    ok(&[
        "report-privacy",
        "--config",
        "c.toml",
        "--model",
        "m/model.json",
        "--out",
        "p.csv",
    ]);
    assert_eq!(
        fs::read_to_string(d.join("p.csv")).unwrap().lines().count(),
        2 + 4
    );

    ok(&[
        "eval",
        "--config",
        "c.toml",
        "--model",
        "m/model.json",
        "--channel",
        "upper-bound",
        "--out",
        "e.csv",
    ]);
    ok(&[
        "sweep",
        "--config",
        "c.toml",
        "--model",
        "m/model.json",
        "--out",
        "s.csv",
    ]);
    let sweep = fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2 + 5);

    ok(&[
        "workflow",
        "--config",
        "c.toml",
        "--model",
        "m/model.json",
        "--draws",
        "20",
        "--no-fading",
        "--out",
        "w.json",
    ]);
    let w = json(&d.join("w.json"));
    assert_eq!(w["sinr_violations"], 0);
    assert_eq!(w["records"].as_array().unwrap().len(), 20);
}
