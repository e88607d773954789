use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn spadseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spadseg"))
        .args(args)
        .output()
        .expect("spawn spadseg")
}

fn ok(args: &[&str]) -> String {
    let out = spadseg(args);
    assert!(
        out.status.success(),
        "spadseg {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, frames: usize, seed: u64, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let (f, s) = (frames.to_string(), seed.to_string());
    let mut args = vec!["simulate", "--out", p(&out), "--frames", &f, "--seed", &s];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn toml_value(path: &Path) -> toml::Table {
    fs::read_to_string(path).unwrap().parse().unwrap()
}

#[test]
fn simulate_reports_sbr_and_categories() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let report = ok(&["simulate", "--out", p(&out), "--frames", "20", "--seed", "4"]);
    for needle in ["train", "val", "mean sbr", "very low"] {
        assert!(report.to_lowercase().contains(needle), "report lacks `{needle}`:\n{report}");
    }
    assert!(out.join("config.resolved").exists());
    let s = toml_value(&out.join("summary.toml"));
    assert_eq!(s["n_frames"].as_integer(), Some(20));
    let n_val = s["val_frames"].as_integer().unwrap();
    assert_eq!(n_val, 3); // ceil(0.15 · 20)
}

#[test]
fn very_low_sbr_schedule_reports_mean_below_target() {
    let tmp = TempDir::new().unwrap();
    let out = simulate(tmp.path(), "vl", 12, 2, &["--sbr-target", "0.04"]);
    let s = toml_value(&out.join("summary.toml"));
    let mean = s["all_mean_sbr"].as_float().unwrap();
    assert!(mean < 0.05, "mean SBR {mean}");
    assert_eq!(s["all_very_low"].as_integer(), Some(12));
}

#[test]
fn fixed_seed_gives_identical_checksums() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(tmp.path(), "a", 6, 9, &[]);
    let b = simulate(tmp.path(), "b", 6, 9, &[]);
    let c = simulate(tmp.path(), "c", 6, 10, &[]);
    let blob = |d: &Path| fs::read(d.join("data.bin")).unwrap();
    assert_eq!(crc32fast::hash(&blob(&a)), crc32fast::hash(&blob(&b)));
    assert_ne!(crc32fast::hash(&blob(&a)), crc32fast::hash(&blob(&c)));
}

#[test]
fn train_predict_and_oracle_evaluate() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "data", 8, 1, &[]);
    let run = tmp.path().join("train");
    ok(&[
        "train", "--data", p(&data), "--out", p(&run), "--kind", "depth", "--epochs", "2", "--batch-size", "4",
    ]);
    assert!(run.join("config.resolved").exists());
    assert!(run.join("checkpoint").join("checkpoint.toml").exists());
    let history = toml_value(&run.join("history.toml"));
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);

    let pred = tmp.path().join("pred");
    ok(&[
        "predict", "--checkpoint", p(&run.join("checkpoint")), "--data", p(&data), "--out", p(&pred),
        "--frames", "0,3",
    ]);
    let manifest = toml_value(&pred.join("masks.toml"));
    let records = manifest["records"].as_array().unwrap();
    assert_eq!(records.len(), 2);
    let shape = records[0]["group"]["tensors"][0]["dims"].as_array().unwrap();
    let shape: Vec<i64> = shape.iter().map(|v| v.as_integer().unwrap()).collect();
    assert_eq!(shape, [32, 64, 7]);
    let ppms: Vec<_> = fs::read_dir(&pred)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
        .collect();
    assert_eq!(ppms.len(), 2);
    let bytes = fs::read(ppms[0].path()).unwrap();
    assert!(bytes.starts_with(b"P6\n64 32\n255\n"));
    assert_eq!(bytes.len(), b"P6\n64 32\n255\n".len() + 64 * 32 * 3);

    let eval = tmp.path().join("oracle");
    let report = ok(&["evaluate", "--data", p(&data), "--out", p(&eval), "--oracle"]);
    let scores = toml_value(&eval.join("fscores.toml"));
    assert_eq!(scores["aggregate_f1"].as_array().unwrap()[0].as_float(), Some(1.0), "{report}");
}

#[test]
fn compare_kind_with_itself_and_mismatched_runs() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "data", 6, 3, &[]);
    let eval = |name: &str, runs: &str| {
        let out = tmp.path().join(name);
        ok(&["evaluate", "--data", p(&data), "--out", p(&out), "--oracle", "--runs", runs]);
        out
    };
    let a = eval("a", "3");
    let b = eval("b", "3");
    let short = eval("short", "2");
    let cmp = tmp.path().join("cmp");
    let report = ok(&["compare", "--eval", p(&a), "--eval", p(&b), "--out", p(&cmp)]);
    assert!(report.contains("no difference"), "{report}");
    let s = toml_value(&cmp.join("compare.toml"));
    let only: Vec<_> = s
        .iter()
        .filter(|(k, _)| k.ends_with("_only_a") || k.ends_with("_only_b"))
        .map(|(_, v)| v.as_float().unwrap())
        .collect();
    assert!(!only.is_empty());
    assert!(only.iter().all(|&v| v == 0.0));
    assert!(s.iter().filter(|(k, _)| k.ends_with("_verdict")).all(|(_, v)| v.as_str() == Some("NoDifference")));

    let bad = spadseg(&["compare", "--eval", p(&a), "--eval", p(&short), "--out", p(&tmp.path().join("bad"))]);
    assert_eq!(bad.status.code(), Some(5));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("run2"), "{msg}");
}

#[test]
fn bench_requires_warmup_frames() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "tiny", 2, 1, &[]);
    let out = spadseg(&["bench", "--data", p(&data), "--out", p(&tmp.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));
}

#[test]
fn bench_runs_on_small_settings() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "d", 4, 1, &[]);
    let out = tmp.path().join("b");
    let report = ok(&[
        "bench", "--data", p(&data), "--out", p(&out), "--frames", "20", "--warmup", "2", "--net-frames", "2",
        "--repeats", "1", "--kinds", "depth",
    ]);
    assert!(report.contains("depth chain"));
    let s = toml_value(&out.join("bench.toml"));
    assert!(s["depth_chain_fps"].as_float().unwrap() > 0.0);
    assert!(s["depth_inference_fps"].as_float().unwrap() > 0.0);
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = TempDir::new().unwrap();
    // clap rejects unknown flags
    assert_eq!(spadseg(&["simulate", "--bogus"]).status.code(), Some(2));
    // missing required path
    assert_eq!(spadseg(&["simulate"]).status.code(), Some(2));
    // unreadable dataset
    let missing = tmp.path().join("nope");
    let out = tmp.path().join("o");
    assert_eq!(spadseg(&["evaluate", "--data", p(&missing), "--out", p(&out), "--oracle"]).status.code(), Some(3));
    // corrupt blob
    let data = simulate(tmp.path(), "d", 3, 1, &[]);
    let blob = data.join("data.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[10] ^= 0xff;
    fs::write(&blob, bytes).unwrap();
    assert_eq!(spadseg(&["evaluate", "--data", p(&data), "--out", p(&out), "--oracle"]).status.code(), Some(4));
    // invalid config value
    assert_eq!(
        spadseg(&["simulate", "--out", p(&tmp.path().join("s")), "--sbr-target", "-1"]).status.code(),
        Some(2)
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("sim.toml");
    fs::write(&cfg, "frames = 5\nseed = 3\n[generator]\nclasses = [2]\n").unwrap();
    let out = tmp.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&out), "--frames", "4"]);
    let resolved = toml_value(&out.join("config.resolved"));
    assert_eq!(resolved["frames"].as_integer(), Some(4));
    assert_eq!(resolved["seed"].as_integer(), Some(3));
    assert_eq!(resolved["generator"]["classes"].as_array().unwrap().len(), 1);
}
