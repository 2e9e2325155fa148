use std::path::Path;

use mvfcnn::cli::{run, EvaluationReport};

fn ok(args: &[&str]) {
    let mut argv = vec!["mvfcnn"];
    argv.extend_from_slice(args);
    assert_eq!(run(argv.clone()), 0, "{argv:?}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "synth": {"height": 96, "width": 96, "objects_per_image": 4, "train_classes": [1, 2, 3, 4], "test_classes": [2, 3]},
  "fcn": {"stage_widths": [4, 4, 6, 6, 8], "head_width": 8, "dropout": 0.0},
  "stages": [
    {"learning_rate": 0.01, "momentum": 0.9, "weight_decay": 0.0, "max_iterations": 3, "batch_size": 2},
    {"learning_rate": 0.005, "momentum": 0.9, "weight_decay": 0.0, "max_iterations": 3, "batch_size": 2}
  ],
  "cnn": {"conv_widths": [4, 4, 4], "hidden": 8, "dropout": 0.0},
  "cnn_sgd": {"learning_rate": 0.01, "momentum": 0.9, "weight_decay": 0.0, "max_iterations": 3},
  "balance_target": 4
}"#;

fn setup(dir: &Path) -> (String, String) {
    let config = dir.join("config.json");
    std::fs::write(&config, SMALL).unwrap();
    ok(&["synth", "--config", s(&config), "--out", s(&dir.join("data"))]);
    (s(&config).to_string(), s(&dir.join("data/manifest.json")).to_string())
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(snapshot(&p));
        } else {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(run(["mvfcnn", "--help"]), 0);
    assert_eq!(run(["mvfcnn", "segment", "--help"]), 0);
    assert_ne!(run(["mvfcnn", "synth", "--out", "x", "--bogus"]), 0);
    assert_ne!(run(["mvfcnn", "explode"]), 0);
}

#[test]
fn missing_inputs_fail_with_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_ne!(run(["mvfcnn", "segment", "--out", s(&out)]), 0);
    assert_ne!(run(["mvfcnn", "train", "--out", s(&out), "--manifest", s(&dir.path().join("nope.json"))]), 0);
    assert_ne!(run(["mvfcnn", "synth", "--out", s(&out), "--config", s(&dir.path().join("nope.json"))]), 0);
}

#[test]
fn truth_against_truth_scores_perfectly_without_touching_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = setup(dir.path());
    let before = snapshot(&dir.path().join("data"));
    let out = dir.path().join("eval");
    ok(&["evaluate", "--config", &config, "--manifest", &manifest, "--predictions", &manifest, "--out", s(&out)]);
    assert_eq!(snapshot(&dir.path().join("data")), before);
    let r: EvaluationReport = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let p = r.pixel.unwrap();
    assert_eq!((p.pixel_accuracy, p.mean_accuracy, p.mean_iu, p.fw_iu), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(r.objects.accuracy_counting_not_segmented, 1.0);
    assert_eq!(r.images.correct, r.images.total);
    assert!(out.join("run.json").is_file() && out.join("report.txt").is_file());
}

#[test]
fn synth_is_idempotent_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, SMALL).unwrap();
    for out in ["a", "b"] {
        ok(&["synth", "--config", s(&config), "--out", s(&dir.path().join(out))]);
    }
    ok(&["synth", "--config", s(&config), "--seed", "7", "--out", s(&dir.path().join("c"))]);
    let strip = |root: &str| {
        snapshot(&dir.path().join(root))
            .into_iter()
            .filter(|(p, _)| !p.ends_with("run.json"))
            .map(|(p, b)| (p.rsplit('/').next().unwrap().to_string(), b))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("a"), strip("b"));
    assert_ne!(strip("a"), strip("c"));
}

#[test]
fn fcn_workflow_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = setup(dir.path());
    let d = |n: &str| dir.path().join(n);
    ok(&["train", "--config", &config, "--manifest", &manifest, "--variant", "fcn16s", "--out", s(&d("train"))]);
    for f in ["fcn32s.ckpt", "fcn16s.ckpt", "model.ckpt", "loss.csv", "train.json", "run.json"] {
        assert!(d("train").join(f).is_file(), "{f}");
    }
    let ckpt = d("train").join("model.ckpt");
    ok(&["segment", "--config", &config, "--manifest", &manifest, "--checkpoint", s(&ckpt), "--out", s(&d("seg"))]);
    ok(&["classify", "--config", &config, "--manifest", &manifest, "--predictions", s(&d("seg")), "--out", s(&d("cls"))]);
    ok(&["evaluate", "--config", &config, "--manifest", &manifest, "--predictions", s(&d("cls")), "--out", s(&d("eval"))]);
    let csv = std::fs::read_to_string(d("cls").join("test_00_objects.csv")).unwrap();
    assert!(csv.starts_with("object_id,voted_class,area,votes_0,votes_1,votes_2,votes_3,votes_4\n"));
    assert!(d("seg").join("test_00_pred_color.png").is_file());
    // Classifying directly from the checkpoint matches classifying from saved label maps.
    ok(&["classify", "--config", &config, "--manifest", &manifest, "--checkpoint", s(&ckpt), "--out", s(&d("cls2"))]);
    assert_eq!(
        std::fs::read(d("cls").join("test_01_objects.csv")).unwrap(),
        std::fs::read(d("cls2").join("test_01_objects.csv")).unwrap()
    );
    // A CNN checkpoint cannot segment.
    ok(&["train", "--config", &config, "--manifest", &manifest, "--variant", "cnn", "--out", s(&d("cnn"))]);
    assert_ne!(
        run(["mvfcnn", "segment", "--config", &config, "--manifest", &manifest, "--checkpoint", s(&d("cnn").join("model.ckpt")), "--out", s(&d("x"))]),
        0
    );
}

#[test]
fn cnn_workflow_and_fine_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let (config, manifest) = setup(dir.path());
    let d = |n: &str| dir.path().join(n);
    ok(&["train", "--config", &config, "--manifest", &manifest, "--variant", "cnn", "--out", s(&d("cnn"))]);
    let ckpt = d("cnn").join("model.ckpt");
    ok(&["classify", "--config", &config, "--manifest", &manifest, "--checkpoint", s(&ckpt), "--out", s(&d("cls"))]);
    ok(&["evaluate", "--config", &config, "--manifest", &manifest, "--predictions", s(&d("cls")), "--out", s(&d("eval"))]);
    let r: EvaluationReport = serde_json::from_slice(&std::fs::read(d("eval").join("report.json")).unwrap()).unwrap();
    assert!(r.pixel.is_none());
    assert_eq!(r.objects.not_segmented, 0);
    // Fine-tune from the checkpoint into a different head size: the head is redrawn.
    let cfg5 = d("five.json");
    std::fs::write(&cfg5, SMALL.replacen('{', "{\"classes\": 5,", 1)).unwrap();
    ok(&["train", "--config", s(&cfg5), "--manifest", &manifest, "--variant", "cnn", "--checkpoint", s(&ckpt), "--out", s(&d("ft"))]);
}
