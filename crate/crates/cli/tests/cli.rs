//! End-to-end runs of the `stbam` binary on a tiny synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stbam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stbam")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small run config; `extra` is appended verbatim and may add sections.
fn write_config(dir: &Path, name: &str, strategy: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 3

[data]
dir = "data"
samples_per_class = 14
val_per_class = 3
test_per_class = 3
width = 24
height = 24
timesteps = 3
min_side = 4
max_side = 20

[graph]
superpixels = 6
extractor = "mean-color"

[mending]
strategy = "{strategy}"

[gnn]
hidden = 8
heads = 2
out_dim = 4

[train]
max_epochs = 5
patience = 5

[output]
dir = "{name}"
{extra}"#
    );
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn generate(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "run", "encoder", "");
    let out = stbam(&["generate-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    cfg
}

#[test]
fn help_lists_config_keys() {
    let out = stbam(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["data.dir", "graph.superpixels", "mending.strategy", "gnn.heads", "loss.lambda", "train.patience"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&stbam(&[])), 1);
    assert_eq!(code(&stbam(&["train"])), 1);
    assert_eq!(code(&stbam(&["no-such-command"])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&stbam(&["train", "--config", missing.to_str().unwrap()])), 1);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[data]\ndir = \"d\"\nbogus = 1\n[output]\ndir = \"o\"\n").unwrap();
    let out = stbam(&["generate-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn single_timestep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run", "encoder", "").to_str().unwrap().to_string();
    let text = fs::read_to_string(&cfg).unwrap().replace("timesteps = 3", "timesteps = 1");
    fs::write(&cfg, text).unwrap();
    let out = stbam(&["generate-data", "--config", &cfg]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn missing_sample_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate(dir.path());
    let out = stbam(&["segment", "--config", cfg.to_str().unwrap(), "--sample", "nope"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn pipeline_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate(dir.path());
    let c = cfg.to_str().unwrap();
    let manifest = fs::read_to_string(dir.path().join("data/manifest.txt")).unwrap();
    let sample = manifest
        .lines()
        .find(|l| l.starts_with("sample ") && l.contains(" test "))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .to_string();

    for cmd in ["segment", "build-supergraph"] {
        let out = stbam(&[cmd, "--config", c, "--sample", &sample]);
        assert_eq!(code(&out), 0, "{cmd}: {}", stderr(&out));
    }
    let out = stbam(&["train", "--config", c]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = dir.path().join("run");
    assert!(run.join("checkpoint.stbam").exists());
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 6);

    let out = stbam(&["evaluate", "--config", c]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = stbam(&["diagnose", "--config", c, "--spectra", &sample]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = stbam(&["spectrum", "--config", c, "--sample", &sample]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let a = write_config(dir.path(), "a", "encoder", "");
    let b = write_config(dir.path(), "b", "encoder", "");
    for cfg in [&a, &b] {
        let out = stbam(&["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("a/history.csv"), read("b/history.csv"));
    assert_eq!(read("a/checkpoint.stbam"), read("b/checkpoint.stbam"));
}

#[test]
fn mismatched_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = generate(dir.path());
    let out = stbam(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let wide = write_config(dir.path(), "wide", "encoder", "");
    let text = fs::read_to_string(&wide).unwrap().replace("hidden = 8", "hidden = 16");
    fs::write(&wide, text).unwrap();
    let ck = dir.path().join("run/checkpoint.stbam");
    let out = stbam(&[
        "evaluate",
        "--config",
        wide.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn parameter_free_mending_diagnoses_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let fixed = write_config(dir.path(), "fixed", "fixed", "");
    let out = stbam(&["diagnose", "--config", fixed.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("fixed").read_dir().unwrap().next().is_some());
    // The encoder needs trained weights.
    let enc = write_config(dir.path(), "untrained", "encoder", "");
    let out = stbam(&["diagnose", "--config", enc.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
