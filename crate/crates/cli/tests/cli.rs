use std::path::Path;
use std::process::{Command, Output};

fn mdbc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdbc"))
        .current_dir(dir)
        .env_remove("MDBC_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SMALL: &[&str] = &[
    "--set",
    "data.circles.n=300",
    "--set",
    "model.components=6",
    "--set",
    "resample.T=6",
    "--set",
    "resample.N=80",
    "--set",
    "clustering.levelset.m=20",
];

const QUICK_DIAGNOSTICS: &[&str] = &[
    "--set",
    "diagnostics.score_identity.n_theta=3",
    "--set",
    "diagnostics.score_identity.n_mc=2000",
    "--set",
    "diagnostics.martingale.chains=40",
    "--set",
    "diagnostics.martingale.horizon=200",
    "--set",
    "diagnostics.martingale.scaling_n=[50,500]",
    "--set",
    "diagnostics.martingale.scaling_chains=40",
    "--set",
    "diagnostics.contraction.levels=[200,3200]",
    "--set",
    "diagnostics.contraction.chains=10",
    "--set",
    "diagnostics.contraction.horizon=100",
];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn pipeline_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdbc(dir.path(), &with(&["pipeline", "--out", "run"], SMALL));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "data.csv",
        "data.provenance.json",
        "model.json",
        "ensemble.bin",
        "ensemble.json",
        "counters.csv",
        "labels.csv",
        "labels_trained.csv",
        "cocluster.bin",
        "cocluster.json",
        "certainty.csv",
        "cluster_counts.json",
        "clusters.svg",
        "certainty.svg",
        "manifest.json",
    ] {
        assert!(dir.path().join("run").join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["stages"].as_array().unwrap().iter().all(|s| s["status"] == "ok"));
    let labels = std::fs::read_to_string(dir.path().join("run/labels.csv")).unwrap();
    assert!(labels.starts_with("n=300,T=6\n"));
    assert_eq!(labels.lines().count(), 7);
    let bytes = std::fs::metadata(dir.path().join("run/cocluster.bin")).unwrap().len();
    assert_eq!(bytes, 300 * 300 * 8);
}

#[test]
fn rerun_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = mdbc(dir.path(), &with(&["pipeline", "--out", "a", "--threads", "1"], SMALL));
    let b = mdbc(dir.path(), &with(&["pipeline", "--out", "b", "--threads", "3"], SMALL));
    assert_eq!((code(&a), code(&b)), (0, 0));
    for f in ["labels.csv", "cocluster.bin", "ensemble.bin", "certainty.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_mdbc"))
            .current_dir(dir.path())
            .env("MDBC_SEED", seed)
            .args(with(&["pipeline", "--out", out], SMALL))
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("5", "s5")), 0);
    assert_eq!(code(&run("6", "s6")), 0);
    let a = std::fs::read(dir.path().join("s5/ensemble.bin")).unwrap();
    let b = std::fs::read(dir.path().join("s6/ensemble.bin")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn staged_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&mdbc(p, &with(&["gen-data", "--out", "d.csv"], SMALL))), 0);
    assert_eq!(code(&mdbc(p, &with(&["fit", "--data", "d.csv", "--out", "m.json"], SMALL))), 0);
    assert_eq!(
        code(&mdbc(p, &with(&["resample", "--model", "m.json", "--data", "d.csv", "--out", "ens"], SMALL))),
        0
    );
    let o = mdbc(
        p,
        &with(
            &["cluster", "--data", "d.csv", "--ensemble", "ens", "--out", "cl", "--set", "clustering.backend=tomato", "--set", "clustering.tomato.tau_merge=0.0001"],
            SMALL,
        ),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p.join("cl/persistence.csv").exists());
    assert_eq!(code(&mdbc(p, &["uncertainty", "--labels", "cl/labels.csv", "--out", "u"])), 0);
    let counts: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("u/cluster_counts.json")).unwrap()).unwrap();
    assert_eq!(counts["resamples"], 6);
    assert_eq!(std::fs::read_to_string(p.join("u/certainty.csv")).unwrap().lines().next(), Some("index,score"));
    assert_eq!(code(&mdbc(p, &with(&["resample", "--model", "m.json", "--out", "x"], SMALL))), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&mdbc(p, &["pipeline", "--set", "resample.bogus=1"])), 2);
    assert_eq!(code(&mdbc(p, &["pipeline", "--set", "resample.eta0=0"])), 2);
    assert_eq!(code(&mdbc(p, &["pipeline", "--config", "missing.json"])), 2);
    std::fs::write(p.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&mdbc(p, &["pipeline", "--config", "bad.json"])), 2);
    let o = mdbc(
        p,
        &["pipeline", "--out", "f", "--set", "data.circles.n=50", "--set", "model.components=80"],
    );
    assert_eq!(code(&o), 4);
    let manifest = std::fs::read_to_string(p.join("f/manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn diagnostics_pass_and_negative_control() {
    let dir = tempfile::tempdir().unwrap();
    let ok = mdbc(dir.path(), &with(&["diagnostics", "--out", "ok"], QUICK_DIAGNOSTICS));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(code(&ok), 0, "{stdout}");
    assert!(dir.path().join("ok/contraction.json").exists());
    let bad = mdbc(dir.path(), &with(&["diagnostics", "--out", "bad", "--corrupt-score"], QUICK_DIAGNOSTICS));
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("score_identity"));
    let frozen = mdbc(
        dir.path(),
        &with(&["diagnostics", "--out", "frozen", "--set", "diagnostics.martingale.horizon=0"], QUICK_DIAGNOSTICS),
    );
    assert!(String::from_utf8_lossy(&frozen.stdout).contains("PASS martingale_l2"));
}
