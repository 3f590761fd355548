use std::path::Path;
use std::process::{Command, Output};

use fifo_core::config::RunConfig;
use fifo_core::data::read_latents;

fn fifo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fifo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(&["generate", "--render"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 16);
    let dump = read_latents(std::fs::File::open(dir.path().join("latents.bin")).unwrap()).unwrap();
    assert_eq!(dump.records.len(), 64);
    assert_eq!(dump.d, 8);
    assert!(dir.path().join("frames/frame_000063.pgm").exists());
    let echoed = RunConfig::load(&dir.path().join("config.resolved.txt")).unwrap();
    assert!(echoed.render);
}

#[test]
fn generate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(fifo(&["generate", "--seed", "7"], a.path())
        .status
        .success());
    assert!(fifo(&["generate", "--seed", "7"], b.path())
        .status
        .success());
    let read = |d: &Path| std::fs::read(d.join("latents.bin")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn zero_frames_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(&["generate", "--frames", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("InvalidParameter"));
}

#[test]
fn lookahead_run_reports_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(
        &[
            "fifo",
            "--partitions",
            "4",
            "--lookahead",
            "--f",
            "16",
            "--frames",
            "20",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("mode = lookahead(n=4)"));
    assert!(summary.contains("capacity = 72"));
    assert!(summary.contains("peak_live_latents = 72"));
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 21);
}

#[test]
fn diagonal_dispatch_and_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(
        &[
            "fifo",
            "--partitions",
            "1",
            "--conditions",
            "A:10,B:20",
            "--frames",
            "20",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("mode = diagonal"));
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let labels: Vec<&str> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert!(labels[..10].iter().all(|&l| l == "0"));
    assert!(labels[10..].iter().all(|&l| l == "1"));
}

#[test]
fn exhausted_condition_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(
        &["fifo", "--conditions", "A:10,B:20", "--frames", "25"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("OutOfRange"));
}

#[test]
fn odd_window_with_lookahead() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(&["fifo", "--lookahead", "--f", "5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("OddWindow"));
}

#[test]
fn unknown_study_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        fifo(&["verify", "theorem2"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn verify_studies_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = fifo(&["verify", "lemma1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS: lemma1"));
    let o = fifo(&["verify", "theorem1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("theorem1.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("0,0,"));
}

#[test]
fn ablate_emits_six_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.txt");
    std::fs::write(&cfg, "study_samples = 20\nstudy_parents = 3\n").unwrap();
    let o = fifo(&["ablate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(
        o.status.code() == Some(0) || o.status.code() == Some(3),
        "{}",
        stderr(&o)
    );
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, "# small run\nf = 4\nframes = 9\nseed = 3\n").unwrap();
    let o = fifo(
        &["fifo", "--config", cfg.to_str().unwrap(), "--seed", "5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let echoed = RunConfig::load(&dir.path().join("config.resolved.txt")).unwrap();
    assert_eq!((echoed.f, echoed.frames, echoed.seed), (4, 9, 5));

    // Rerunning from the echoed config reproduces the dump.
    let again = tempfile::tempdir().unwrap();
    let echo = dir.path().join("config.resolved.txt");
    let o = fifo(&["fifo", "--config", echo.to_str().unwrap()], again.path());
    assert_eq!(o.status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("latents.bin")).unwrap();
    assert_eq!(read(dir.path()), read(again.path()));

    std::fs::write(&cfg, "frames = many\n").unwrap();
    let o = fifo(&["fifo", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Format"));
}

#[test]
fn bench_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.txt");
    std::fs::write(
        &cfg,
        "bench_dim = 8\nbench_frames = 4\nbench_workers = 1,2\n",
    )
    .unwrap();
    let o = fifo(&["bench", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("f16-n4-d8-lp,1,"));
}
