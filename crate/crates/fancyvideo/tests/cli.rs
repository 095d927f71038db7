//! The `fancyvideo` binary end to end on a tiny model.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::tiny_config;
use fancyvideo_core::denoiser::Guidance;

fn fancyvideo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fancyvideo"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fancyvideo(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing invocation.
fn fail(args: &[&str]) -> (i32, String) {
    let out = fancyvideo(args);
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    (out.status.code().unwrap(), err.trim_end().to_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_sample_attn_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        serde_json::to_vec(&tiny_config(3, Guidance::CrossFrame)).unwrap(),
    )
    .unwrap();
    ok(&[
        "train",
        "--config",
        s(&d.join("cfg.json")),
        "--out",
        s(&d.join("run")),
    ]);
    for f in [
        "checkpoint.fvckpt",
        "loss.csv",
        "schedule.csv",
        "config.json",
    ] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    let schedule = std::fs::read_to_string(d.join("run/schedule.csv")).unwrap();
    assert!(schedule.starts_with("t,alphabar\n"));
    assert!(schedule.trim_end().ends_with(",0"));

    let ckpt = d.join("run/checkpoint.fvckpt");
    ok(&[
        "corpus",
        "--config",
        s(&d.join("cfg.json")),
        "--count",
        "2",
        "--out",
        s(&d.join("corpus")),
    ]);
    let common = [
        "--ckpt",
        s(&ckpt),
        "--caption",
        "red square moving_right",
        "--steps",
        "3",
        "--capture-last",
        "2",
    ];
    let image = d.join("cond.ppm");
    assert_eq!(
        std::fs::read_to_string(d.join("corpus/index.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    fancyvideo::images::write_image(&image, &fancyvideo_core::Tensor::full(&[6, 6, 3], -1.0))
        .unwrap();

    let (sample_dir, attn_dir) = (d.join("sample"), d.join("attn"));
    let mut args = vec!["sample", "--out", s(&sample_dir), "--image", s(&image)];
    args.extend(common);
    ok(&args);
    for fr in 0..3 {
        assert!(d.join(format!("sample/frame_{fr:02}.ppm")).exists());
    }
    let motion = ok(&[
        "metrics",
        "motion",
        "--video",
        s(&d.join("sample/video.json")),
    ]);
    let value: f64 = motion.lines().nth(1).unwrap().parse().unwrap();
    assert!(value.is_finite() && value >= 0.0);

    let mut args = vec![
        "attn",
        "--out",
        s(&attn_dir),
        "--block",
        "0",
        "--image",
        s(&image),
    ];
    args.extend(common);
    ok(&args);
    let drift = ok(&[
        "metrics",
        "drift",
        "--trace",
        s(&d.join("attn/probs.csv")),
        "--token",
        "2",
        "--height",
        "6",
        "--width",
        "6",
    ]);
    let written = std::fs::read_to_string(d.join("attn/drift.csv")).unwrap();
    // Same rows apart from the label column.
    let strip = |t: &str| {
        t.lines()
            .skip(1)
            .map(|l| l.split_once(',').unwrap().1.to_owned())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&drift), strip(&written));

    let (code, err) = fail(&[
        "attn",
        "--ckpt",
        s(&ckpt),
        "--caption",
        "red square moving_right",
        "--block",
        "4",
        "--out",
        s(&d.join("x")),
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error kind=usage message="), "{err}");
    let (code, err) = fail(&[
        "sample",
        "--ckpt",
        s(&ckpt),
        "--caption",
        "red triangle",
        "--out",
        s(&d.join("x")),
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error kind=caption message="), "{err}");
}

#[test]
fn errors_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.fvckpt");
    let (code, err) = fail(&[
        "sample",
        "--ckpt",
        s(&missing),
        "--caption",
        "red square",
        "--out",
        "x",
    ]);
    assert_eq!(code, 1);
    let msg = err.strip_prefix("error kind=io message=").unwrap();
    assert!(serde_json::from_str::<String>(msg)
        .unwrap()
        .contains("missing.fvckpt"));

    std::fs::write(dir.path().join("junk.fvckpt"), b"not a checkpoint").unwrap();
    let (code, err) = fail(&[
        "metrics",
        "motion",
        "--video",
        s(&dir.path().join("junk.fvckpt")),
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error kind="), "{err}");

    std::fs::write(dir.path().join("bad.json"), br#"{"steps": 1, "colour": 3}"#).unwrap();
    let (code, err) = fail(&["train", "--config", s(&dir.path().join("bad.json"))]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error kind=json message="), "{err}");

    let (code, err) = fail(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error kind=usage message="), "{err}");
    let (code, _) = fail(&["sample", "--caption", "red square"]);
    assert_eq!(code, 2);
    assert!(fancyvideo(&["--help"]).status.success());
}
