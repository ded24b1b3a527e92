use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tongue(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tongue"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = tongue(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_then_normalize() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "64", "--seed", "7", "--out", "d"]);
    ok(d, &["normalize", "--manifest", "d/manifest.csv", "--out", "n", "--workers", "4"]);
    assert_eq!(fs::read_dir(d.join("n/images")).unwrap().count(), 64);
    assert_eq!(fs::read_dir(d.join("n/masks")).unwrap().count(), 64);
    let manifest = fs::read_to_string(d.join("n/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 65);
    assert!(manifest.lines().nth(1).unwrap().starts_with("images/synth_00000.png,masks/synth_00000.png,synth_00000,"));
    let orient = fs::read_to_string(d.join("n/orientation.csv")).unwrap();
    assert_eq!(orient.lines().count(), 65);
}

#[test]
fn synth_output_does_not_depend_on_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "6", "--seed", "3", "--side", "96", "--out", "a"]);
    ok(d, &["synth", "--count", "6", "--seed", "3", "--side", "96", "--out", "b", "--workers", "3"]);
    assert_eq!(files(&d.join("a/images")), files(&d.join("b/images")));
    assert_eq!(fs::read(d.join("a/manifest.csv")).unwrap(), fs::read(d.join("b/manifest.csv")).unwrap());
}

#[test]
fn eval_of_the_labels_themselves_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "20", "--seed", "2", "--side", "96", "--out", "d"]);
    // predictions file: image_path plus the eight label columns of the manifest
    let manifest = fs::read_to_string(d.join("d/manifest.csv")).unwrap();
    let mut preds = String::new();
    for line in manifest.lines() {
        let f: Vec<&str> = line.split(',').collect();
        preds.push_str(&format!("{},{}\n", f[0], f[3..11].join(",")));
    }
    fs::write(d.join("p.csv"), preds).unwrap();
    ok(d, &["eval", "--predictions", "p.csv", "--manifest", "d/manifest.csv", "--out", "r.json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["average_f1"], 1.0);
    assert_eq!(report["average_accuracy"], 1.0);
    assert_eq!(report["jaccard"], 1.0);
}

#[test]
fn split_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "30", "--seed", "4", "--side", "96", "--out", "d"]);
    let args = |out: &'static str| ["split", "--manifest", "d/manifest.csv", "--k", "5", "--holdout", "0.2", "--seed", "1", "--out", out];
    ok(d, &args("p1.json"));
    ok(d, &args("p2.json"));
    let a = fs::read(d.join("p1.json")).unwrap();
    assert_eq!(a, fs::read(d.join("p2.json")).unwrap());
    let plan: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(plan["folds"].as_array().unwrap().len(), 5);
    assert_eq!(plan["holdout"].as_array().unwrap().len(), 6);
}

#[test]
fn config_file_supplies_flags_and_the_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "30", "--seed", "4", "--side", "96", "--out", "d"]);
    fs::write(d.join("c.toml"), "k = 4\nseed = 9\nholdout = 3\nmanifest = \"d/manifest.csv\"\n").unwrap();
    ok(d, &["split", "--config", "c.toml", "--out", "from_file.json"]);
    ok(d, &["split", "--config", "c.toml", "--k", "3", "--out", "override.json"]);
    let read = |p: &str| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(d.join(p)).unwrap()).unwrap() };
    let a = read("from_file.json");
    assert_eq!(a["folds"].as_array().unwrap().len(), 4);
    assert_eq!(a["seed"], 9);
    assert_eq!(a["holdout"].as_array().unwrap().len(), 3);
    assert_eq!(read("override.json")["folds"].as_array().unwrap().len(), 3);
}

#[test]
fn defaults_are_reported_at_startup() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["synth", "--count", "1", "--seed", "1", "--side", "64", "--out", "d"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"noise\":3.0") && err.contains("\"workers\":1"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for args in [
        vec!["split", "--manifest", "m.csv", "--out", "p.json"],
        vec!["split", "--manifest", "m.csv", "--out", "p.json", "--seed", "1", "--bogus"],
        vec!["frobnicate"],
        vec!["synth", "--seed", "1", "--out", "d", "--workers", "0"],
        vec!["split", "--config", "missing.toml", "--out", "p.json"],
    ] {
        assert_eq!(tongue(d, &args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn data_errors_exit_with_one_and_name_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--count", "3", "--seed", "1", "--side", "64", "--out", "d"]);
    let m = fs::read_to_string(d.join("d/manifest.csv")).unwrap();
    let mut lines: Vec<String> = m.lines().map(String::from).collect();
    lines[2] = lines[2].replacen("synth_00001.png", "missing.png", 1);
    fs::write(d.join("d/broken.csv"), lines.join("\n") + "\n").unwrap();
    let out = tongue(d, &["normalize", "--manifest", "d/broken.csv", "--out", "n"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("missing.png"), "{err}");
}
