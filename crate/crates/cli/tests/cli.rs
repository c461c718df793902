//! Drives the `stitchlab` binary on tiny smoke-profile runs.

use std::path::Path;
use std::process::{Command, Output};

fn stitchlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stitchlab"))
        .args(args)
        .env_remove("STITCHLAB_DATA_ROOT")
        .env_remove("STITCHLAB_OUT")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// A smoke config with a few synthetic images so runs take seconds.
fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    let out = dir.join("exp");
    std::fs::write(
        &path,
        format!(
            "profile = \"smoke\"\nout = {:?}\nimages_per_point = 1\n\n[budget]\ntrain_examples = 16\ntest_examples = 8\n",
            out.display().to_string()
        ),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn help_lists_subcommands() {
    let out = stitchlab(&["--help"]);
    assert!(out.status.success());
    let help = text(&out.stdout);
    for cmd in ["zoo", "sweep", "stats", "genimg", "plot"] {
        assert!(help.contains(cmd), "{help}");
    }
}

#[test]
fn missing_data_root_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-cifar");
    let out = stitchlab(&[
        "zoo",
        "eval",
        "--control",
        "--profile",
        "desk",
        "--data-root",
        missing.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("no-such-cifar"), "{err}");
}

#[test]
fn malformed_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "profile = \"smoke\"\nseed = \"zero\"\n").unwrap();
    let out = stitchlab(&[
        "zoo",
        "eval",
        "--control",
        "--config",
        path.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("bad.toml") && err.contains("line 2"), "{err}");
}

#[test]
fn sweep_without_zoo_lists_missing_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = stitchlab(&["sweep", "--config", &cfg, "--regime", "trained_trained"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("R1111"), "{}", text(&out.stderr));
}

#[test]
fn plot_renders_and_rejects_bad_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    std::fs::write(&csv, "sender\\receiver,0,1\n0,0.9,NA\n1,0.8,0.7\n").unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    for png in [&a, &b] {
        let out = stitchlab(&["plot", csv.to_str().unwrap(), png.to_str().unwrap()]);
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    std::fs::write(&csv, "sender\\receiver,0,1\n0,0.9,NA\n1,0.8,1.7\n").unwrap();
    let out = stitchlab(&["plot", csv.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(
        text(&out.stderr).contains("line 3"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn smoke_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let exp = dir.path().join("exp");

    let out = stitchlab(&["zoo", "train", "--config", &cfg]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(exp.join("zoo/summary.csv").exists());

    let out = stitchlab(&["zoo", "eval", "--control", "--config", &cfg]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("RandomControl"));

    let sweep = ["sweep", "--config", &cfg, "--regime", "trained_trained"];
    let out = stitchlab(&sweep);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let matrix = exp.join("matrices/R1111_s0__R1111_s1__trained_trained.csv");
    let first =
        std::fs::read_to_string(&matrix).unwrap_or_else(|_| panic!("{}", text(&out.stdout)));
    assert_eq!(first.lines().count(), 6);
    let out = stitchlab(&sweep);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&matrix).unwrap(), first);

    let out = stitchlab(&["stats", "--config", &cfg, "--scope", "diagonals"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stats = std::fs::read_to_string(exp.join("stats/mse_diagonals.csv")).unwrap();
    assert!(stats.lines().all(|l| l.split(',').count() == 12));

    let png = dir.path().join("matrix.png");
    let out = stitchlab(&["plot", matrix.to_str().unwrap(), png.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
}
