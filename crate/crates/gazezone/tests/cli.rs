use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gazezone::checkpoint::{save_checkpoint, zone_names, CheckpointMeta};
use gazezone::synthetic::{write_synthetic, SyntheticDataset};
use gazezone_core::models::{stand_in_model, Family};
use gazezone_core::preprocess::Normalization;
use gazezone_core::synth::SynthConfig;

fn gazezone(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazezone"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GAZEZONE_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dataset(dir: &Path) -> SyntheticDataset {
    let config = SynthConfig { subjects: 4, frames_per_zone: 6, frames_per_event: 3, ..SynthConfig::default() };
    write_synthetic(&dir.join("data"), &config).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepare_split(dir: &Path, ds: &SyntheticDataset) -> PathBuf {
    let split = dir.join("split.json");
    let mut args = vec!["prepare", "--manifest"];
    args.extend(ds.manifests.iter().map(|m| s(m)));
    args.extend(["--train-subjects", "s00,s01,s02", "--test-subjects", "s03", "--time-gap", "5", "-o", s(&split)]);
    let out = gazezone(&args, dir);
    assert!(out.status.success(), "{}", stderr(&out));
    split
}

fn train_args<'a>(ds: &'a SyntheticDataset, split: &'a Path, out: &'a Path) -> Vec<&'a str> {
    vec![
        "train",
        "--split",
        s(split),
        "--profile",
        s(&ds.profile),
        "--detections",
        s(&ds.detections),
        "--width-divisor",
        "16",
        "--resolution",
        "64",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--seed",
        "5",
        "-o",
        s(out),
    ]
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = gazezone(&["prepare", "-o", "x.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--manifest"));
    let out = gazezone(&["cam", "--checkpoint", "m.gzck", "--profile", "p.json", "-o", "cams"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("<FRAMES>"));
}

#[test]
fn unknown_backbone_lists_the_families() {
    let dir = tempfile::tempdir().unwrap();
    let out = gazezone(&["train", "--split", "s.json", "--profile", "p.json", "--backbone", "lenet"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for f in ["alexnet", "vgg16", "resnet50", "squeezenet"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn fully_connected_checkpoints_have_no_cams_and_short_benchmarks_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let model = stand_in_model(Family::Vgg16, 16, 1).unwrap();
    let ckpt = dir.path().join("vgg.gzck");
    let meta = CheckpointMeta {
        spec: model.spec().clone(),
        variable_resolution: false,
        resolution: 224,
        strategy: "half-face".into(),
        normalization: Normalization::default(),
        zones: zone_names(),
        epoch: None,
        train_config: None,
        train_config_fingerprint: None,
    };
    save_checkpoint(&ckpt, &model, &meta).unwrap();
    let frame = ds.frames[0].0.clone();
    let out = gazezone(
        &["cam", "--checkpoint", s(&ckpt), "--profile", s(&ds.profile), "--detections", s(&ds.detections), "-o", "cams", s(&frame)],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("global-average-pooling"), "{}", stderr(&out));

    let out = gazezone(&["bench", "--checkpoint", s(&ckpt), "--iters", "29"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("at least 30"), "{}", stderr(&out));
}

#[test]
fn prepare_train_eval_cam_bench() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ds = dataset(root);
    let split = prepare_split(root, &ds);
    let counts = std::fs::read_to_string(root.join("split.counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 8);
    assert!(counts.lines().skip(1).all(|l| l.split(',').nth(4) == Some("6")), "{counts}");

    let temporal = root.join("temporal.json");
    let mut args = vec!["prepare", "--split", "temporal", "--fractions", "0.7", "0.15", "0.15", "-o", s(&temporal), "--manifest"];
    args.extend(ds.manifests.iter().map(|m| s(m)));
    assert!(gazezone(&args, root).status.success());

    let run = root.join("run");
    let out = gazezone(&train_args(&ds, &split, &run), root);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["config.json", "epochs.csv", "model.gzck", "report.json", "checkpoints/epoch-001.gzck", "checkpoints/epoch-002.gzck", "test/confusion.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    // Log lines are level tagged.
    assert!(stderr(&out).lines().all(|l| l.contains(" level=")), "{}", stderr(&out));
    let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["learning_rate"], 4e-4);
    assert_eq!(config["epochs"], 2);

    // Replaying the persisted config reproduces the model bit for bit.
    let replay = root.join("replay");
    let out = gazezone(&["train", "--config", s(&run.join("config.json")), "-o", s(&replay)], root);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(run.join("model.gzck")).unwrap(), std::fs::read(replay.join("model.gzck")).unwrap());

    let model = run.join("model.gzck");
    let common = ["--profile", s(&ds.profile), "--detections", s(&ds.detections)];
    let eval = |mode: &str, extra: &[&str], out: &str| {
        let mut args = vec!["eval", "--mode", mode];
        args.extend(common);
        args.extend(extra);
        args.extend(["-o", out]);
        let o = gazezone(&args, root);
        assert!(o.status.success(), "{mode}: {}", stderr(&o));
        root.join(out)
    };
    let conf = eval("confusion", &["--checkpoint", s(&model), "--split", s(&split)], "conf");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(conf.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"], 42);
    assert_eq!(std::fs::read(conf.join("confusion.csv")).unwrap(), std::fs::read(run.join("test/confusion.csv")).unwrap());

    let res = eval("resolution", &["--checkpoint", s(&model), "--split", s(&split), "--resolutions", "64,96"], "res");
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(res.join("resolution.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    let grid = eval(
        "grid",
        &["--runs", s(&run), "--families", "squeezenet,alexnet", "--strategies", "half-face,face", "--split", s(&split)],
        "grid",
    );
    let csv = std::fs::read_to_string(grid.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("squeezenet,half-face,") && csv.lines().nth(1).unwrap().ends_with(",ok"));
    assert_eq!(csv.matches("failed").count(), 3);

    // Cross-dataset manifest: three subjects, one configuration left out for s2.
    let configs = gazezone_core::evaluation::ConfigurationGrid::standard().configurations();
    let mut manifest = String::from("subject_id,head_pose_deg,h_gaze_deg,v_gaze_deg,image_path\n");
    for (i, c) in configs.iter().enumerate() {
        for subject in 0..3 {
            if subject == 2 && i == 0 {
                continue;
            }
            let frame = &ds.frames[(i * 3 + subject) % ds.frames.len()].0;
            manifest.push_str(&format!("c{subject},{},{},{},{}\n", c.head_pose_deg, c.h_gaze_deg, c.v_gaze_deg, s(frame)));
        }
    }
    std::fs::write(root.join("columbia.csv"), manifest).unwrap();
    let col = eval("columbia", &["--checkpoint", s(&model), "--columbia", "columbia.csv"], "col");
    let hists: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(col.join("histograms.json")).unwrap()).unwrap();
    let hists = hists.as_array().unwrap();
    assert_eq!(hists.len(), 105);
    assert_eq!(hists[0]["classified"], 2);
    assert_eq!(hists[0]["missing"], serde_json::json!(["c2"]));
    assert_eq!(std::fs::read_dir(col.join("charts")).unwrap().count(), 105);

    let frames: Vec<&str> = ds.frames.iter().filter(|(_, f)| f.sample.subject_id == "s03").take(3).map(|(p, _)| s(p)).collect();
    let mut args = vec!["cam", "--checkpoint", s(&model), "--size", "48", "-o", "cams"];
    args.extend(common);
    args.extend(&frames);
    let out = gazezone(&args, root);
    assert!(out.status.success(), "{}", stderr(&out));
    let pngs = walk(&root.join("cams")).into_iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    // Seven overlays and the crop per frame, plus the sheet.
    assert_eq!(pngs, 3 * 8 + 1);

    let out = gazezone(&["bench", "--checkpoint", s(&model), "--iters", "30", "--warmup", "2", "-o", "bench.json"], root);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("annotation only"), "{stdout}");
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("bench.json")).unwrap()).unwrap();
    assert_eq!(b["forward"]["iterations"], 30);
    assert!(b["forward"]["p50_ms"].as_f64().unwrap() <= b["forward"]["p95_ms"].as_f64().unwrap());
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
