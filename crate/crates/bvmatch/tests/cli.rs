//! End-to-end checks of the command-line interface through the real binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bvmatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvmatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn synth_then_render_bv_writes_default_sized_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let out = bvmatch(dir.path(), &["synth", "--seed", "7", "--out", "a.xyz"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let out = bvmatch(dir.path(), &["render-bv", "a.xyz", "--out", "a.pgm"]);
    assert_eq!(out.status.code(), Some(0));
    let bytes = fs::read(dir.path().join("a.pgm")).unwrap();
    let header = b"P5\n250 250\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 250 * 250);
}

#[test]
fn render_bv_csv_export_has_one_row_per_image_row() {
    let dir = tempfile::tempdir().unwrap();
    bvmatch(
        dir.path(),
        &["synth", "--seed", "3", "--out", "a.xyz", "--extent", "12"],
    );
    let out = bvmatch(
        dir.path(),
        &[
            "--set",
            "window_half=20",
            "render-bv",
            "a.xyz",
            "--out",
            "a.pgm",
            "--csv",
            "a.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 100);
    assert_eq!(rows[0].split(',').count(), 100);
}

#[test]
fn match_pair_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    // Same world, one rescan with measurement noise.
    bvmatch(
        dir.path(),
        &["synth", "--seed", "5", "--out", "a.xyz", "--extent", "12"],
    );
    bvmatch(
        dir.path(),
        &[
            "synth",
            "--seed",
            "5",
            "--out",
            "b.xyz",
            "--extent",
            "12",
            "--noise",
            "0.05",
        ],
    );
    let args = [
        "--set",
        "window_half=20",
        "--set",
        "patch_size=48",
        "match-pair",
        "a.xyz",
        "b.xyz",
        "--seed",
        "1",
        "--csv",
        "report.csv",
    ];
    let first = bvmatch(dir.path(), &args);
    let report1 = fs::read(dir.path().join("report.csv")).unwrap();
    let second = bvmatch(dir.path(), &args);
    let report2 = fs::read(dir.path().join("report.csv")).unwrap();
    assert_eq!(first.status.code(), Some(0), "{}", stdout(&first));
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(report1, report2);
    assert!(stdout(&first).contains("frame_a,frame_b,theta_deg,tx,ty,inliers,rms_px"));
}

#[test]
fn describe_writes_a_loadable_descriptor_record() {
    let dir = tempfile::tempdir().unwrap();
    bvmatch(
        dir.path(),
        &["synth", "--seed", "9", "--out", "a.xyz", "--extent", "12"],
    );
    let out = bvmatch(
        dir.path(),
        &[
            "--set",
            "window_half=20",
            "--set",
            "patch_size=48",
            "describe",
            "a.xyz",
            "--out",
            "a.bvft",
            "--mim-pgm",
            "mim.pgm",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let set = bvmatch::bvft::load_descriptor_set(&dir.path().join("a.bvft")).unwrap();
    assert!(!set.is_empty());
    assert_eq!(set.len() % 2, 0);
    assert_eq!(set.descriptors[0].vector.len(), 216);
    let mim = fs::read(dir.path().join("mim.pgm")).unwrap();
    assert_eq!(&mim[..3], b"P5\n");
}

/// Builds a three-frame database in `dir` and returns the manifest name.
fn build_test_db(dir: &Path) -> &'static str {
    for (seed, name) in [(11, "f0.xyz"), (12, "f1.xyz"), (13, "f2.xyz")] {
        let out = bvmatch(
            dir,
            &[
                "synth",
                "--seed",
                &seed.to_string(),
                "--out",
                name,
                "--extent",
                "12",
            ],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    fs::write(
        dir.join("frames.csv"),
        "id,path,tx,ty,theta\nf0,f0.xyz,0,0,0\nf1,f1.xyz,15,0,0\nf2,f2.xyz,30,0,0\n",
    )
    .unwrap();
    let out = bvmatch(
        dir,
        &[
            "--set",
            "window_half=20",
            "--set",
            "patch_size=48",
            "train-dict",
            "f0.xyz",
            "f1.xyz",
            "f2.xyz",
            "--words",
            "64",
            "--seed",
            "4",
            "--out",
            "dict.bvdb",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let out = bvmatch(
        dir,
        &[
            "--set",
            "window_half=20",
            "--set",
            "patch_size=48",
            "build-db",
            "--frames",
            "frames.csv",
            "--dict",
            "dict.bvdb",
            "--out",
            "db.bvdb",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    "frames.csv"
}

#[test]
fn eval_recall_on_self_database_prints_perfect_recall() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_test_db(dir.path());
    let out = bvmatch(
        dir.path(),
        &[
            "--set",
            "window_half=20",
            "--set",
            "patch_size=48",
            "eval-recall",
            "--db",
            "db.bvdb",
            "--queries",
            manifest,
            "--top",
            "3",
            "--out",
            "recall.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(
        stdout(&out).contains("recall@1 = 1.000"),
        "stdout: {}",
        stdout(&out)
    );
    let text = fs::read_to_string(dir.path().join("recall.csv")).unwrap();
    assert!(text.starts_with("n,recall\n"));
}

#[test]
fn query_retrieves_the_matching_frame_first() {
    let dir = tempfile::tempdir().unwrap();
    build_test_db(dir.path());
    let out = bvmatch(
        dir.path(),
        &[
            "--set",
            "window_half=20",
            "--set",
            "patch_size=48",
            "query",
            "f1.xyz",
            "--db",
            "db.bvdb",
            "--top",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let first_row = text.lines().nth(1).unwrap();
    assert!(first_row.starts_with("1,f1,"), "got {first_row}");
}

#[test]
fn eval_pose_reports_success_rate_and_strict_boundary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("est.csv"),
        "id,tx,ty,theta\np0,1.0,2.0,0.1\np1,2.0,0.0,0.0\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("truth.csv"),
        "id,tx,ty,theta\np0,1.0,2.0,0.1\np1,0.0,0.0,0.0\n",
    )
    .unwrap();
    let out = bvmatch(
        dir.path(),
        &[
            "eval-pose",
            "--estimates",
            "est.csv",
            "--truths",
            "truth.csv",
            "--out",
            "errors.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    // p0 exact -> success; p1 offset by exactly 2 m -> strict failure.
    assert!(stdout(&out).contains("success_rate=0.500"), "{}", stdout(&out));
    let text = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(text.contains("p0,0.000000,0.000000,true"));
    assert!(text.contains("p1,2.000000,0.000000,false"));
}

#[test]
fn config_file_applies_and_set_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bv.conf"), "window_half = 20\n").unwrap();
    bvmatch(
        dir.path(),
        &["synth", "--seed", "2", "--out", "a.xyz", "--extent", "12"],
    );
    let out = bvmatch(
        dir.path(),
        &[
            "--config",
            "bv.conf",
            "render-bv",
            "a.xyz",
            "--out",
            "a.pgm",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("100x100"));
    let out = bvmatch(
        dir.path(),
        &[
            "--config",
            "bv.conf",
            "--set",
            "window_half=10",
            "render-bv",
            "a.xyz",
            "--out",
            "b.pgm",
        ],
    );
    assert!(stdout(&out).contains("50x50"));
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown subcommand: usage error.
    let out = bvmatch(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown flag: usage error.
    let out = bvmatch(dir.path(), &["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    // Missing input file: runtime error.
    let out = bvmatch(dir.path(), &["render-bv", "missing.xyz", "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    // Bad config value: usage error.
    let out = bvmatch(
        dir.path(),
        &["--set", "window_half=banana", "synth", "--out", "x.xyz"],
    );
    assert_eq!(out.status.code(), Some(1));
    // Help: success.
    let out = bvmatch(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
