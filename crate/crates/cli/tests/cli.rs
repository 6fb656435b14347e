use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fusetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusetrack")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(text: &str, key: &str) -> f64 {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text:?}"))
        .parse()
        .unwrap()
}

fn synth(dir: &Path, preset: &str, frames: usize, seed: u64) {
    let o = fusetrack(&[
        "synth",
        "--preset",
        preset,
        "--frames",
        &frames.to_string(),
        "--seed",
        &seed.to_string(),
        "--output",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn track_then_eval_a_static_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let results = tmp.path().join("out/results.json");
    let overlays = tmp.path().join("overlays");
    synth(&seq, "static", 20, 3);
    let o = fusetrack(&[
        "track",
        "--sequence",
        seq.to_str().unwrap(),
        "--output",
        results.to_str().unwrap(),
        "--seed",
        "3",
        "--dump-overlays",
        overlays.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(field(&stdout(&o), "auc") >= 0.75);
    assert_eq!(fs::read_dir(&overlays).unwrap().count(), 20);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(json["frames"].as_array().unwrap().len(), 20);
    assert!(json["summary"]["fps"].is_null());

    let e = fusetrack(&["eval", "--results", results.to_str().unwrap(), "--sequence", seq.to_str().unwrap()]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    assert_eq!(field(&stdout(&e), "auc"), field(&stdout(&o), "auc"));
}

#[test]
fn repeated_runs_write_identical_results() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "distractor", 15, 8);
    let mut outputs = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = tmp.path().join(name);
        let o = fusetrack(&["track", "--sequence", seq.to_str().unwrap(), "--output", path.to_str().unwrap(), "--seed", "8"]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_groundtruth_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "static", 3, 0);
    fs::remove_file(seq.join("groundtruth.txt")).unwrap();
    let out = tmp.path().join("r.json");
    let o = fusetrack(&["track", "--sequence", seq.to_str().unwrap(), "--output", out.to_str().unwrap(), "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("groundtruth.txt"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, "static", 3, 0);
    let cfg = tmp.path().join("tracker.cfg");
    fs::write(&cfg, "lambda_fusion = 0.8\nlamda = 0.5\n").unwrap();
    let out = tmp.path().join("r.json");
    let o = fusetrack(&[
        "track",
        "--sequence",
        seq.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--seed",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn unknown_ablation_group_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g.txt");
    let o = fusetrack(&["ablate", "--group", "G7", "--seed", "0", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("G7"));
}

#[test]
fn bad_arguments_and_presets_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = fusetrack(&["synth", "--preset", "rain", "--seed", "0", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fusetrack(&["track", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(fusetrack(&["bench", "--frames", "5", "--seed", "0"]).status.code(), Some(2));
    assert_eq!(fusetrack(&["--help"]).status.code(), Some(0));
}

#[test]
fn bench_reports_throughput() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("bench.json");
    let o = fusetrack(&["bench", "--frames", "10", "--seed", "1", "--output", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fps = field(&stdout(&o), "fps");
    assert!(fps.is_finite() && fps > 0.0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["frames"], 10);
    assert!((json["fps"].as_f64().unwrap() - fps).abs() < 0.01);
}
