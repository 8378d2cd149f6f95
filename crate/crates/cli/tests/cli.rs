use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_NET: &[&str] = &[
    "--backbone",
    "3x4:relu",
    "--head-fw",
    "3x1:none",
    "--head-bscan",
    "3x1:none",
    "--head-pm25",
    "3x1:none",
];

const SMALL_WORLD: &[&str] = &["--sim-rows", "16", "--sim-cols", "16", "--stations", "6"];

fn smokegrid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smokegrid"))
        .current_dir(dir)
        .env_remove("SMOKEGRID_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = smokegrid(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn ok_owned(dir: &Path, args: &[String]) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(dir, &refs)
}

/// Every file below `root`, relative path and contents, sorted by path.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn synth_small(dir: &Path, frames: &str) {
    ok_owned(dir, &with(&["synth", "--frames", frames], SMALL_WORLD));
}

#[test]
fn synth_with_zero_frames_writes_an_empty_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["synth", "--frames", "0"]);
    assert!(stdout.contains("0 frames"), "{stdout}");
    let manifest = fs::read_to_string(tmp.path().join("archive/manifest.txt")).unwrap();
    assert!(manifest.contains("frames = 0"));
}

#[test]
fn synth_is_reproducible_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        ok_owned(tmp.path(), &with(&["synth", "--frames", "4", "--seed", seed, "--archive", name], SMALL_WORLD));
    }
    let a = tree(&tmp.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, tree(&tmp.path().join("b")));
    assert_ne!(a, tree(&tmp.path().join("c")));
}

#[test]
fn synth_refuses_to_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "2");
    let out = smokegrid(tmp.path(), &["synth", "--frames", "2"]);
    assert!(!out.status.success());
}

const OBSERVATIONS: &str = "\
timestamp,lat,lon,variable,value
2018-08-15T00:00:00Z,49.25,-123.1,pm25,12.5
2018-08-14T00:00:00Z,50.1,-120.3,frp,300
";

#[test]
fn ingest_one_reading_and_one_fire_gives_one_frame() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("obs.csv"), OBSERVATIONS).unwrap();
    let stdout = ok(tmp.path(), &["ingest", "obs.csv"]);
    assert!(stdout.contains("1 frames"), "{stdout}");
    assert!(stdout.contains("skipped 0 observations"), "{stdout}");
    let manifest = fs::read_to_string(tmp.path().join("archive/manifest.txt")).unwrap();
    assert!(manifest.contains("frames = 1") && manifest.contains("dense_truth = false"), "{manifest}");
}

#[test]
fn ingest_reports_the_malformed_line() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{OBSERVATIONS}2018-08-15 noon,49.0,-123.0,pm25,3\n");
    fs::write(tmp.path().join("obs.csv"), text).unwrap();
    let out = smokegrid(tmp.path(), &["ingest", "obs.csv"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 4"), "{stderr}");
}

#[test]
fn ingest_counts_observations_outside_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{OBSERVATIONS}2018-08-15T00:00:00Z,10.0,10.0,pm25,4\n");
    fs::write(tmp.path().join("obs.csv"), text).unwrap();
    let stdout = ok(tmp.path(), &["ingest", "obs.csv"]);
    assert!(stdout.contains("1 frames"), "{stdout}");
    assert!(stdout.contains("skipped 1 observations outside the grid (pm25 1)"), "{stdout}");
}

#[test]
fn ingest_without_files_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!smokegrid(tmp.path(), &["ingest"]).status.success());
}

fn history_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(dir.join("history.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn one_epoch_writes_checkpoint_and_one_history_row() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "10");
    ok_owned(tmp.path(), &with(&["train", "--epochs", "1"], TINY_NET));
    assert!(tmp.path().join("model.ckpt").is_file());
    let rows = history_rows(tmp.path());
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0");
}

#[test]
fn training_without_an_archive_fails_clearly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smokegrid(tmp.path(), &["train", "--archive", "missing", "--epochs", "1"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing"), "{stderr}");
}

#[test]
fn resumed_training_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "10");
    ok_owned(tmp.path(), &with(&["train", "--epochs", "2"], TINY_NET));
    ok_owned(tmp.path(), &with(&["train", "--epochs", "2", "--resume"], TINY_NET));
    let steps: Vec<u64> = history_rows(tmp.path()).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(steps.len(), 4);
    assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
}

#[test]
fn eval_reports_dense_rows_and_heatmaps_for_synthetic_archives() {
    let tmp = tempfile::tempdir().unwrap();
    synth_small(tmp.path(), "10");
    ok_owned(tmp.path(), &with(&["train", "--epochs", "1"], TINY_NET));
    let stdout = ok(tmp.path(), &["eval", "--heatmaps", "4", "--eval-subset", "all"]);
    assert!(stdout.contains("model dense off-station"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("report/report.csv")).unwrap();
    assert!(csv.starts_with("system,bucket,mae,record_count"));
    assert!(csv.contains("model dense,"));
    let count = |ext: &str| {
        fs::read_dir(tmp.path().join("report"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(ext))
            .count()
    };
    assert_eq!(count(".pgm"), 4);
    assert_eq!(count(".csv"), 5);
}

#[test]
fn eval_without_dense_truth_has_no_dense_rows() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("obs.csv"), OBSERVATIONS).unwrap();
    ok(tmp.path(), &["ingest", "obs.csv"]);
    ok_owned(tmp.path(), &with(&["train", "--epochs", "1", "--split", "1,0,0"], TINY_NET));
    let stdout = ok(tmp.path(), &["eval", "--eval-subset", "all"]);
    assert!(stdout.contains("model"), "{stdout}");
    assert!(!stdout.contains("dense"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("report/report.csv")).unwrap();
    assert!(!csv.contains("dense"));
}

#[test]
fn gradcheck_passes_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let first = ok(tmp.path(), &["gradcheck", "--seed", "4"]);
    assert!(first.contains("network_total_loss"));
    assert!(!first.contains("FAIL"));
    assert_eq!(first, ok(tmp.path(), &["gradcheck", "--seed", "4"]));
}

#[test]
fn gradcheck_with_an_injected_fault_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smokegrid(tmp.path(), &["gradcheck", "--gradcheck-fault"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn config_files_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.cfg"), "# toy\nepochs = 3\nseed = 11\n").unwrap();
    let text = ok(tmp.path(), &["config", "--config", "run.cfg", "--epochs", "1"]);
    assert!(text.contains("\nepochs = 1\n"), "{text}");
    assert!(text.contains("\nseed = 11\n"), "{text}");
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smokegrid(tmp.path(), &["synth", "--epochz", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    fs::write(tmp.path().join("bad.cfg"), "seed = 1\nwat = 2\n").unwrap();
    let out = smokegrid(tmp.path(), &["config", "--config", "bad.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn thread_count_comes_from_the_environment_when_unset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_smokegrid"))
        .current_dir(tmp.path())
        .env("SMOKEGRID_THREADS", "not-a-number")
        .args(["config"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_smokegrid"))
        .current_dir(tmp.path())
        .env("SMOKEGRID_THREADS", "not-a-number")
        .args(["config", "--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
}
