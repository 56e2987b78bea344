//! End-to-end tests of the `ptb` binary: exit codes, artifact layout, and
//! byte-identical reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ptb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptb"))
}

/// A configuration small enough for the full pipeline to run in seconds.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = format!(
        "seed = 11\n\
         [data]\nkind = synth\nclasses = 3\nper_class_train = 12\nper_class_test = 8\nside = 16\n\
         [trigger]\nshape = square\nsize_frac = 0.25\ncolor = 0,0,0\nanchor = forehead\n\
         [poison]\ntarget = 1\ncount = 3\n\
         [train]\nepochs = 2\nbatch_size = 8\nlearning_rate = 0.05\nptb_enabled = true\n\
         [eval]\nprobes_per_run = 5\nruns = 2\n\
         [output]\ndir = {}\n",
        dir.join("out").display()
    );
    let path = dir.join("config.ini");
    fs::write(&path, cfg).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn ptb");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn usage_errors_exit_1_runtime_errors_exit_2() {
    let out = ptb().arg("nonsense").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = ptb().args(["train", "--config", "/does/not/exist.ini"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing config is a usage error");

    // runtime failure: evaluating a checkpoint that does not exist
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = ptb()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--checkpoint", "/does/not/exist.ckpt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = ptb().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn preview_writes_seven_named_files_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(ptb().args(["preview", "--samples", "2", "--config"]).arg(&cfg));
    let out = dir.path().join("out");
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 14);
    for stage in [
        "0_original",
        "1_injected",
        "2_distance",
        "3_angle",
        "4_rotation",
        "5_brightness",
        "6_noise_composite",
    ] {
        assert!(
            names.iter().any(|n| n == &format!("preview_00_{stage}.ppm")),
            "missing stage {stage} in {names:?}"
        );
    }
}

#[test]
fn pipeline_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");

    let mut snapshots: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for _ in 0..2 {
        run_ok(ptb().args(["poison", "--config"]).arg(&cfg));
        run_ok(ptb().args(["train", "--config"]).arg(&cfg));
        run_ok(ptb().args(["eval", "--config"]).arg(&cfg));
        let mut files = Vec::new();
        collect_files(&out, &mut files);
        files.sort_by(|a, b| a.0.cmp(&b.0));
        snapshots.push(files);
    }
    assert_eq!(snapshots[0].len(), snapshots[1].len());
    for (a, b) in snapshots[0].iter().zip(&snapshots[1]) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1, "file {} changed between reruns", a.0);
    }
    // sanity: the expected artifacts exist
    let names: Vec<&str> = snapshots[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.iter().any(|n| n.ends_with("model.ckpt")));
    assert!(names.iter().any(|n| n.ends_with("epochs.csv")));
    assert!(names.iter().any(|n| n.ends_with("eval.csv")));
    assert!(names.iter().any(|n| n.ends_with("manifest.csv")));
}

fn collect_files(root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, out);
        } else {
            out.push((
                path.display().to_string(),
                fs::read(&path).unwrap(),
            ));
        }
    }
}

#[test]
fn poisoned_dir_feeds_training_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(ptb().args(["poison", "--config"]).arg(&cfg));

    // manifest row count and poisoned flags
    let manifest =
        fs::read_to_string(dir.path().join("out/poisoned/manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 39, "36 clean + 3 poisoned");
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 3);

    // train from the written directory by flipping the data source
    let out2 = dir.path().join("out2");
    run_ok(
        ptb()
            .args(["train", "--config"])
            .arg(&cfg)
            .args([
                "--set",
                "data.kind=dir",
                "--set",
            ])
            .arg(format!(
                "data.dir={}",
                dir.path().join("out/poisoned").display()
            ))
            .arg("--set")
            .arg(format!(
                "data.test_dir={}",
                dir.path().join("out/poisoned").display()
            ))
            .args(["--out"])
            .arg(&out2),
    );
    assert!(out2.join("model.ckpt").exists());
}

#[test]
fn eval_csv_has_documented_header_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(ptb().args(["train", "--config"]).arg(&cfg));
    run_ok(ptb().args(["eval", "--config"]).arg(&cfg));
    let csv = fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scene,ptb,run,target,F_t,F_s,R_ptb,D_c,D_b,D_ptb"
    );
    let body: Vec<&str> = lines.collect();
    // 2 scenes x (2 runs + min/max/ave)
    assert_eq!(body.len(), 10);
    assert_eq!(body.iter().filter(|l| l.contains(",ave,")).count(), 2);
    for l in &body {
        assert!(l.starts_with("simple,") || l.starts_with("complex,"));
    }
    // R_ptb column within [0, 100]
    for l in body.iter().filter(|l| !l.contains(",min,") && !l.contains(",max,") && !l.contains(",ave,")) {
        let r: f64 = l.split(',').nth(6).unwrap().parse().unwrap();
        assert!((0.0..=100.0).contains(&r));
    }
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(
        ptb()
            .args(["sweep", "--counts", "2,4", "--config"])
            .arg(&cfg)
            .args(["--set", "eval.runs=2", "--set", "train.epochs=1"]),
    );
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "count,ptb,scene,r_ptb_ave");
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 8, "2 counts x 2 ptb x 2 scenes");
    assert!(body[0].starts_with("2,false,simple,"));
    assert!(body[7].starts_with("4,true,complex,"));
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_ok(ptb().args(["train", "--config"]).arg(&cfg));
    let a = fs::read(dir.path().join("out/model.ckpt")).unwrap();
    run_ok(ptb().args(["train", "--seed", "99", "--config"]).arg(&cfg));
    let b = fs::read(dir.path().join("out/model.ckpt")).unwrap();
    assert_ne!(a, b);
}
