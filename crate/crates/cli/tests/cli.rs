use std::path::{Path, PathBuf};
use std::process::Command;

use kicklab_core::ldp::Potential;

use kicklab_cli::manifest::LOCK_FILE;
use kicklab_cli::{run, CliError, ExperimentConfig, Manifest};

const TOY: &str = r#"
experiment = "toy"
seed = 7

[system]
kind = "toy"
a = [0.5]

[noise]
b = [0.25]

[partition]
cells = 400
half_width = 0.5
"#;

fn toy(recipe: &str) -> String {
    format!("{TOY}\n[recipe]\n{recipe}\n")
}

fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn paths(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.validate().into_iter().map(|v| v.path).collect()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            assert!(cfg.validate().is_empty(), "{}: {:?}", path.display(), cfg.validate());
            seen += 1;
        }
    }
    assert!(seen >= 7);
}

#[test]
fn zero_kick_on_a_resolved_axis_is_rejected() {
    let text = r#"
experiment = "flat"
seed = 1

[system]
kind = "toy"
a = [0.5, 0.25]

[noise]
b = [0.0, 0.25]

[recipe]
name = "eigen-triple"
"#;
    let v = parse(text).validate();
    assert!(v.iter().any(|v| v.path == "noise.b[0]" && v.message.contains("kick density undefined")), "{v:?}");
}

#[test]
fn dt_must_divide_the_unit_interval() {
    let text = r#"
experiment = "ns"
seed = 1

[system]
kind = "ns"
nu = 0.1
k2_max = 2
dt = 0.3

[noise]
b = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]

[recipe]
name = "mixing"
start = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
"#;
    assert!(paths(&parse(text)).contains(&"system.dt".to_string()));
}

#[test]
fn weak_squeezing_asks_for_a_larger_n() {
    let text = r#"
experiment = "ls"
seed = 1

[system]
kind = "toy"
a = [0.5, 0.9, 0.9]
saturated = true

[noise]
b = [0.25, 0.1, 0.1]

[recipe]
name = "ls-verify"
n = 1
radius = 1.0
"#;
    let v = parse(text).validate();
    assert!(v.iter().any(|v| v.path == "recipe.n" && v.message.contains("needs larger N")), "{v:?}");
}

#[test]
fn unknown_fields_do_not_parse() {
    let err = ExperimentConfig::from_toml(&format!("bogus = 1\n{}", toy("name = \"eigen-triple\""))).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eigen_triple_at_zero_potential_is_markov() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse(&toy("name = \"eigen-triple\""));
    cfg.potential = Potential::linear(0, 0.0);
    let m = run(&cfg, dir.path()).unwrap();
    let lambda = m.summary["lambda"].as_f64().unwrap();
    assert!((0.999..=1.0 + 1e-12).contains(&lambda), "lambda {lambda}");
    for f in ["triple.json", "triple.csv", "kernel.bin", "kernel.json", "config.toml"] {
        assert!(m.file(f).is_some(), "{f} missing");
    }
}

#[test]
fn scgf_sweep_covers_the_grid_and_vanishes_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse(&toy("name = \"scgf-sweep\""));
    run(&cfg, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("scgf.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 81);
    let zero = rows.iter().find(|r| r.split(',').next().unwrap().parse::<f64>().unwrap() == 0.0).unwrap();
    let q: f64 = zero.split(',').nth(1).unwrap().parse().unwrap();
    assert!(q.abs() < 1e-10, "Q(0) = {q}");
}

#[test]
fn same_config_and_seed_reproduce_the_manifest() {
    let cfg = parse(&toy("name = \"mixing\"\nstart = [0.5]\nk_max = 12\nn_traj = 2000\nreference_len = 20000"));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run(&cfg, a.path()).unwrap();
    let mb = run(&cfg, b.path()).unwrap();
    assert_eq!(ma.files, mb.files);
    assert_eq!(
        std::fs::read(a.path().join("mixing.csv")).unwrap(),
        std::fs::read(b.path().join("mixing.csv")).unwrap()
    );
    assert_eq!(Manifest::read(a.path()).unwrap(), ma);
    let mut other = cfg.clone();
    other.seed = 8;
    let c = tempfile::tempdir().unwrap();
    assert_ne!(run(&other, c.path()).unwrap().file("mixing.csv"), ma.file("mixing.csv"));
}

#[test]
fn locked_directory_is_refused_and_the_lock_is_released() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse(&toy("name = \"eigen-triple\""));
    std::fs::write(dir.path().join(LOCK_FILE), b"").unwrap();
    assert!(matches!(run(&cfg, dir.path()), Err(CliError::Locked(_))));
    std::fs::remove_file(dir.path().join(LOCK_FILE)).unwrap();
    run(&cfg, dir.path()).unwrap();
    assert!(!dir.path().join(LOCK_FILE).exists());
}

fn kicklab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kicklab")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let ok = write("ok.toml", &toy("name = \"eigen-triple\""));
    let bad = write("bad.toml", "experiment = ");
    let invalid = write("invalid.toml", &toy("name = \"eigen-triple\"").replace("cells = 400", "cells = 1"));
    let stiff = write("stiff.toml", &format!("{}\n[tolerances]\npower_max_iter = 2\n", toy("name = \"eigen-triple\"")));
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(kicklab(&["validate", "--config", &ok]).status.code(), Some(0));
    assert_eq!(kicklab(&["validate", "--config", &bad]).status.code(), Some(2));
    assert_eq!(kicklab(&["validate", "--config", &invalid]).status.code(), Some(2));
    assert_eq!(kicklab(&["run", "--config", &stiff, "--out", out]).status.code(), Some(3));
    let missing = dir.path().join("missing.toml");
    assert_eq!(kicklab(&["validate", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    let run = kicklab(&["run", "--config", &ok, "--out", out, "--threads", "1"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let listed = String::from_utf8(kicklab(&["list-recipes"]).stdout).unwrap();
    assert_eq!(listed.lines().count(), 7);
}
