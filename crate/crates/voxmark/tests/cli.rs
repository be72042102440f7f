use std::path::{Path, PathBuf};
use std::process::Command;

use voxmark::checkpoint::{self, Checkpoint};
use voxmark::records::{read_json, write_json, DetectionRecord, EvalRecord, ShapeModelRecord};
use voxmark_core::unet::{NetArch, NetParams};

fn run(args: &[&str]) -> (i32, String, String) {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = voxmark::cli::run(&args, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: usize, extra: &[&str]) -> PathBuf {
    let count = count.to_string();
    let mut args = vec!["gen-data", "--out", s(dir), "--count_per_category", &count, "--seed", "5"];
    args.extend_from_slice(extra);
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains(&format!("B: {count}")));
    dir.join("manifest.json")
}

#[test]
fn gen_data_writes_manifest_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen(&tmp.path().join("a"), 2, &[]);
    let b = gen(&tmp.path().join("b"), 2, &[]);
    let entries: Vec<serde_json::Value> = read_json(&a).unwrap();
    assert_eq!(entries.len(), 8);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    for e in &entries {
        let rel = e["volume_path"].as_str().unwrap();
        let va = std::fs::read(tmp.path().join("a").join(rel)).unwrap();
        let vb = std::fs::read(tmp.path().join("b").join(rel)).unwrap();
        assert_eq!(va, vb, "{rel}");
        assert_eq!(&va[..4], b"VVR1");
    }
}

#[test]
fn config_file_and_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "count_per_category = 1\nnoise_sigma_lowdose = 0.2\n").unwrap();
    let out_dir = tmp.path().join("d");
    let (code, out, _) = run(&["gen-data", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code, 0);
    assert!(out.contains("N: 1"));

    std::fs::write(&cfg, "count_per_categroy = 1\n").unwrap();
    let (code, _, err) = run(&["gen-data", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code, 2);
    assert!(err.contains("count_per_categroy"), "{err}");
    let (code, _, err) = run(&["gen-data", "--out", s(&out_dir), "--bogus", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("bogus"));
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn help_lists_keys_with_defaults() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for key in ["learning_rate", "p_thres", "suppression", "sigma", "depth", "distractor_probability", "shape_model"] {
        assert!(out.contains(&format!("--{key}")), "{key}");
    }
    assert!(out.contains("0.0001") && out.contains("0.5"));
}

fn tiny_train(manifest: &Path, dir: &Path, epochs: &str, extra: &[&str]) -> (i32, String, String) {
    let mut args = vec![
        "train",
        "--manifest",
        s(manifest),
        "--checkpoint_dir",
        s(dir),
        "--depth",
        "1",
        "--base_channels",
        "2",
        "--epochs",
        epochs,
        "--learning_rate",
        "0.01",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_writes_checkpoints_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 1, &[]);
    let full = tmp.path().join("full");
    let (code, out, err) = tiny_train(&manifest, &full, "3", &[]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("epoch 3"));
    for f in ["final.unc", "epoch_0001.unc", "epoch_0003.unc", "loss.csv"] {
        assert!(full.join(f).exists(), "{f}");
    }
    let ck = checkpoint::load(&full.join("final.unc"), None).unwrap();
    assert_eq!(ck.arch, NetArch { depth: 1, base_channels: 2 });
    assert_eq!(ck.progress.as_ref().unwrap().epoch, 3);

    let part = tmp.path().join("part");
    assert_eq!(tiny_train(&manifest, &part, "1", &[]).0, 0);
    let resume = part.join("final.unc");
    let (code, out, err) = tiny_train(&manifest, &part, "3", &["--resume", s(&resume)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("epoch 2") && !out.contains("epoch 1 "));
    let log = std::fs::read_to_string(part.join("loss.csv")).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(log.lines().next().unwrap(), "epoch,mean_loss,wall_seconds");
    assert_eq!(epochs, ["1", "2", "3"]);
    // Resuming reproduces the uninterrupted run exactly.
    assert_eq!(std::fs::read(full.join("final.unc")).unwrap(), std::fs::read(part.join("final.unc")).unwrap());

    let (code, _, err) = tiny_train(&manifest, &part, "3", &["--resume", s(&resume), "--depth", "2"]);
    assert_eq!(code, 2);
    assert!(err.contains("architecture mismatch"), "{err}");
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 1, &[]);
    let (code, _, err) = tiny_train(&manifest, &tmp.path().join("ck"), "2", &["--learning_rate", "1e30"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("diverged"), "{err}");
}

#[test]
fn shape_fit_and_detect() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 4, &[]);
    let model_a = tmp.path().join("shape_a.json");
    let model_b = tmp.path().join("shape_b.json");
    for m in [&model_a, &model_b] {
        let (code, out, err) = run(&["shape-fit", "--manifest", s(&manifest), "--out", s(m)]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("k="));
    }
    assert_eq!(std::fs::read(&model_a).unwrap(), std::fs::read(&model_b).unwrap());
    let rec: ShapeModelRecord = read_json(&model_a).unwrap();
    assert!(rec.eigvals.len() <= 3 && !rec.eigvals.is_empty());
    assert_eq!(rec.n_train, 4);
    assert_eq!(rec.coordinate_space, "mm");

    let arch = NetArch { depth: 1, base_channels: 2 };
    let ck = tmp.path().join("net.unc");
    checkpoint::save(&ck, &Checkpoint { arch, params: NetParams::init(&arch, 3).unwrap(), progress: None }).unwrap();
    let plain = tmp.path().join("plain.json");
    let constrained = tmp.path().join("constrained.json");
    let (code, _, err) =
        run(&["detect", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out", s(&plain), "--p_thres", "-10"]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = run(&[
        "detect",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&manifest),
        "--out",
        s(&constrained),
        "--p_thres",
        "-10",
        "--shape-model",
        s(&model_a),
    ]);
    assert_eq!(code, 0, "{err}");
    let plain: Vec<DetectionRecord> = read_json(&plain).unwrap();
    let constrained: Vec<DetectionRecord> = read_json(&constrained).unwrap();
    assert_eq!(plain.len(), 16);
    assert!(plain.iter().all(|r| !r.config.shape_constraint && r.category.as_deref() == Some("B")));
    assert!(constrained.iter().all(|r| r.config.shape_constraint));
    // Peaks of an untrained net rarely form a plausible pair.
    let rejected =
        constrained.iter().filter(|r| r.left.unwrap().rejected_by_shape || r.right.unwrap().rejected_by_shape).count();
    assert!(rejected > 0);
    assert!(constrained.iter().all(|r| !(r.left.unwrap().rejected_by_shape && r.right.unwrap().rejected_by_shape)));
}

#[test]
fn shape_fit_needs_two_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 1, &[]);
    let (code, _, err) = run(&["shape-fit", "--manifest", s(&manifest), "--out", s(&tmp.path().join("m.json"))]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn detect_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 1, &[]);
    let out = tmp.path().join("r.json");
    let (code, _, _) = run(&[
        "detect",
        "--checkpoint",
        s(&tmp.path().join("missing.unc")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 2);

    // 32^3 volumes are not divisible by 2^6.
    let arch = NetArch { depth: 6, base_channels: 1 };
    let ck = tmp.path().join("deep.unc");
    checkpoint::save(&ck, &Checkpoint { arch, params: NetParams::init(&arch, 1).unwrap(), progress: None }).unwrap();
    let (code, _, _) = run(&["detect", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out", s(&out)]);
    assert_ne!(code, 0);
    let recs: Vec<DetectionRecord> = read_json(&out).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.error.as_deref().is_some_and(|e| e.contains("divisible"))));
}

fn fixture_report(manifest: &Path, flip_left: &[&str], offset: usize) -> Vec<DetectionRecord> {
    let entries: Vec<voxmark::records::ManifestEntry> = read_json(manifest).unwrap();
    let cfg = voxmark_core::detect::DetectorConfig::default();
    entries
        .iter()
        .map(|e| {
            let a = e.annotation.to_annotation().unwrap();
            let side = |v: Option<voxmark_core::VoxelIndex>, flip: bool| voxmark_core::detect::SideDetection {
                present: v.is_some() != flip,
                peak_voxel: v.map(|v| voxmark_core::VoxelIndex::new(v.i + offset, v.j, v.k)).unwrap_or_default(),
                peak_value: if v.is_some() != flip { 0.9 } else { 0.1 },
                rejected_by_shape: false,
            };
            let flip = flip_left.contains(&a.volume_id.as_str());
            let r = voxmark_core::detect::DetectionResult { left: side(a.left, flip), right: side(a.right, false) };
            DetectionRecord::ok(&a.volume_id, &r, &cfg, false)
        })
        .collect()
}

#[test]
fn eval_fixture_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 2, &[]);
    // B0000 loses its left ear (predicted R); N0001 gains one (predicted L).
    let a = tmp.path().join("a.json");
    write_json(&a, &fixture_report(&manifest, &["B0000", "N0001"], 0)).unwrap();
    let out = tmp.path().join("eval.json");
    let csv = tmp.path().join("rows.csv");
    let (code, stdout, err) =
        run(&["eval", "--report", s(&a), "--manifest", s(&manifest), "--out", s(&out), "--csv", s(&csv)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("accuracy 0.7500"));
    let rec: EvalRecord = read_json(&out).unwrap();
    let mut expect = [[0u64; 4]; 4];
    expect[0][0] = 1;
    expect[2][0] = 1;
    expect[1][1] = 2;
    expect[2][2] = 2;
    expect[3][3] = 1;
    expect[1][3] = 1;
    assert_eq!(rec.confusion, expect);
    assert_eq!(rec.false_present, 1);
    assert_eq!(rec.localization.errors_mm, vec![0.0; 6]);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 9);

    let b = tmp.path().join("b.json");
    write_json(&b, &fixture_report(&manifest, &[], 1)).unwrap();
    let (code, stdout, err) =
        run(&["eval", "--report", s(&b), "--manifest", s(&manifest), "--compare", s(&a), "--out", s(&out)]);
    // Every paired difference is exactly one voxel, so the test is degenerate.
    assert_eq!(code, 4, "{stdout}{err}");

    let empty = tmp.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let (code, _, err) = run(&["eval", "--report", s(&empty), "--manifest", s(&manifest)]);
    assert_eq!(code, 2);
    assert!(err.contains("empty"));
}

#[test]
fn eval_compare_reports_t_test() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = gen(&tmp.path().join("data"), 2, &[]);
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    write_json(&a, &fixture_report(&manifest, &[], 0)).unwrap();
    let mut recs = fixture_report(&manifest, &[], 0);
    // Shift some peaks by varying amounts so the differences have spread.
    for (n, r) in recs.iter_mut().enumerate() {
        if let Some(l) = r.left.as_mut().filter(|l| l.present) {
            l.peak_voxel[1] += n % 3;
        }
    }
    write_json(&b, &recs).unwrap();
    let out = tmp.path().join("cmp.json");
    let (code, stdout, err) =
        run(&["eval", "--report", s(&b), "--manifest", s(&manifest), "--compare", s(&a), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("paired t-test"));
    let rec: EvalRecord = read_json(&out).unwrap();
    let cmp = rec.comparison.unwrap();
    // Two B volumes contribute both sides, L and R volumes one each.
    assert_eq!(cmp.pairs, 8);
    assert_eq!(cmp.df, 7);
    assert!(cmp.t != 0.0 && cmp.p_two_sided > 0.0 && cmp.p_two_sided < 1.0);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_voxmark");
    let status = Command::new(exe).arg("--help").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&status.stdout).contains("gen-data"));
    let status = Command::new(exe).args(["gen-data", "--nope", "1"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("nope"));
}
