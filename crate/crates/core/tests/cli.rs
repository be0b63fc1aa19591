use polardet::cli::{EXIT_IO, EXIT_USAGE, EXIT_VERIFICATION, EXIT_VERSION};
use polardet::pipeline::mean_grid_radius;
use polardet::synthdata::read_dataset;
use polardet::toynet::{Checkpoint, Topology, ToyNet};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn polardet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polardet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = polardet(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    polardet(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_hash(dir: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    format!("{:x}", h.finalize())
}

fn synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let data = dir.join(format!("data_{n}_{seed}"));
    ok(&[
        "synth",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        p(&data),
    ]);
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    for d in [&a, &b] {
        ok(&["synth", "--n", "12", "--seed", "5", "--out", p(d)]);
    }
    assert_eq!(dir_hash(&a), dir_hash(&b));
    assert!(a.join("manifest.csv").exists());
    assert!(a.join("classes.txt").exists());
    let c = synth(t.path(), 12, 6);
    assert_ne!(dir_hash(&a), dir_hash(&c));
}

#[test]
fn synth_zero_images_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    assert_eq!(code(&["synth", "--n", "0", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(code(&["synth", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(code(&["no-such-command"]), EXIT_USAGE);
}

#[test]
fn synth_places_one_hundred_fifty_objects() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("crowd");
    ok(&[
        "synth",
        "--n",
        "1",
        "--objects",
        "150",
        "--width",
        "512",
        "--height",
        "512",
        "--object-scale",
        "0.5",
        "--out",
        p(&out),
    ]);
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    let row = manifest.lines().nth(1).unwrap();
    assert_eq!(row.rsplit(',').next().unwrap(), "150");
    let labels = std::fs::read_to_string(out.join("labels/img_00000.txt")).unwrap();
    assert_eq!(labels.lines().count(), 150);
}

#[test]
fn zero_learning_rate_checkpoint_equals_initialization() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 6, 1);
    let ck = t.path().join("ck.json");
    train(
        &data,
        &ck,
        &["--lr", "0", "--iters", "2", "--batch", "2", "--seed", "3"],
    );
    let loaded = read_dataset(&data).unwrap();
    let init = ToyNet::new(
        Topology::new(loaded.classes.len()),
        3,
        mean_grid_radius(&loaded.samples, 4),
    );
    assert_eq!(Checkpoint::load(&ck).unwrap().params, init.params);
    let history = std::fs::read_to_string(ck.with_extension("loss.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("iteration,total,pole,regression"));
}

#[test]
fn fixed_seed_training_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 6, 2);
    let (a, b) = (t.path().join("a.json"), t.path().join("b.json"));
    for ck in [&a, &b] {
        train(&data, ck, &["--iters", "3", "--batch", "2", "--seed", "4"]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = t.path().join("c.json");
    train(&data, &c, &["--iters", "3", "--batch", "2", "--seed", "5"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn oracle_detections_score_perfectly_at_half_iou() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 20, 3);
    let dets = t.path().join("dets.txt");
    ok(&["detect", "--oracle", "--data", p(&data), "--out", p(&dets)]);
    let report = t.path().join("report");
    let stdout = ok(&[
        "eval",
        "--detections",
        p(&dets),
        "--data",
        p(&data),
        "--iou",
        "0.5",
        "--iou",
        "0.75",
        "--out",
        p(&report),
    ]);
    assert!(stdout.contains("mAP@0.5 = 1.000000"), "{stdout}");
    // Poles decode to cell centres, so small boxes can miss a strict IoU.
    assert!(stdout.contains("mAP@0.75 = "), "{stdout}");
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(csv.starts_with("iou,class,ap,true_positives,false_positives,num_gt"));
    for iou in ["0.50", "0.75"] {
        let pr = report.join(format!("pr_class0_iou{iou}.csv"));
        assert!(std::fs::read_to_string(pr)
            .unwrap()
            .starts_with("threshold,recall,precision"));
    }
}

#[test]
fn untrained_network_detects_nothing_above_threshold() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 4, 4);
    let ck = t.path().join("ck.json");
    train(&data, &ck, &["--lr", "0", "--iters", "1", "--batch", "1"]);
    let cc = t.path().join("cc.txt");
    ok(&[
        "detect",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--out",
        p(&cc),
    ]);
    assert_eq!(std::fs::read_to_string(&cc).unwrap(), "");

    let topk = t.path().join("topk.txt");
    ok(&[
        "detect",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--extractor",
        "topk",
        "--k",
        "5",
        "--out",
        p(&topk),
    ]);
    let lines = std::fs::read_to_string(&topk).unwrap().lines().count();
    assert!(lines > 0 && lines <= 4 * 5, "{lines}");
}

#[test]
fn stricter_iou_never_raises_ap() {
    let t = tempfile::tempdir().unwrap();
    let data = synth(t.path(), 8, 7);
    let ck = t.path().join("ck.json");
    train(
        &data,
        &ck,
        &["--iters", "20", "--batch", "4", "--lr", "0.01"],
    );
    let dets = t.path().join("dets.txt");
    ok(&[
        "detect",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--extractor",
        "topk",
        "--k",
        "10",
        "--out",
        p(&dets),
    ]);
    let report = t.path().join("r");
    ok(&[
        "eval",
        "--detections",
        p(&dets),
        "--data",
        p(&data),
        "--iou",
        "0.5",
        "--iou",
        "0.75",
        "--out",
        p(&report),
    ]);
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    let map = |iou: &str| -> f64 {
        csv.lines()
            .find(|l| l.starts_with(&format!("{iou},mAP,")))
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(map("0.75") <= map("0.5"));
}

#[test]
fn grad_check_selection_and_failure() {
    let out = ok(&["grad-check", "--loss", "ring", "--points", "50"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "check,compared,max_rel_error,tolerance,passed");
    assert_eq!(lines.len(), 2);
    // Two partial derivatives per ring point.
    assert!(lines[1].starts_with("ring,100,"));
    assert_eq!(
        code(&[
            "grad-check",
            "--loss",
            "smooth-l1",
            "--points",
            "50",
            "--loss-tol",
            "0"
        ]),
        EXIT_VERIFICATION
    );
    assert_eq!(code(&["grad-check", "--loss", "nope"]), EXIT_USAGE);
}

#[test]
fn flags_override_config_file() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("settings.txt");
    std::fs::write(&cfg, "# grad check\nloss = ring\npoints=20\n").unwrap();
    let out = ok(&["grad-check", "--config", p(&cfg)]);
    assert!(out.lines().nth(1).unwrap().starts_with("ring,40,"));
    let out = ok(&["grad-check", "--config", p(&cfg), "--points", "30"]);
    assert!(out.lines().nth(1).unwrap().starts_with("ring,60,"));
    let out = ok(&["grad-check", "--config", p(&cfg), "--loss", "focal"]);
    assert!(out.lines().nth(1).unwrap().starts_with("focal,20,"));

    std::fs::write(&cfg, "points\n").unwrap();
    assert_eq!(code(&["grad-check", "--config", p(&cfg)]), EXIT_USAGE);
}

#[test]
fn checkpoint_class_mismatch_is_a_version_error() {
    let t = tempfile::tempdir().unwrap();
    let two = synth(t.path(), 3, 8);
    let three = t.path().join("three");
    ok(&["synth", "--n", "3", "--classes", "3", "--out", p(&three)]);
    let ck = t.path().join("ck.json");
    train(&two, &ck, &["--iters", "1", "--batch", "1"]);
    let dets = t.path().join("d.txt");
    let args = [
        "detect",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&three),
        "--out",
        p(&dets),
    ];
    assert_eq!(code(&args), EXIT_VERSION);

    std::fs::write(&ck, "{\"magic\": \"something-else\"}").unwrap();
    let args = [
        "detect",
        "--checkpoint",
        p(&ck),
        "--data",
        p(&two),
        "--out",
        p(&dets),
    ];
    assert_eq!(code(&args), EXIT_VERSION);
}

#[test]
fn missing_inputs_are_io_errors() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("nope");
    assert_eq!(
        code(&["train", "--data", p(&missing), "--out", "x.json"]),
        EXIT_IO
    );
    assert_eq!(code(&["extract", "--heatmap", p(&missing)]), EXIT_IO);
    let data = synth(t.path(), 2, 9);
    assert_eq!(
        code(&[
            "detect",
            "--checkpoint",
            p(&missing),
            "--data",
            p(&data),
            "--out",
            p(&t.path().join("d.txt"))
        ]),
        EXIT_IO
    );
}

#[test]
fn encode_dump_then_extract_finds_every_pole() {
    let t = tempfile::tempdir().unwrap();
    let labels = t.path().join("labels.txt");
    std::fs::write(
        &labels,
        "10 10 30 10 30 20 10 20 plane\n40 40 56 40 56 56 40 56 car\n",
    )
    .unwrap();
    let out = t.path().join("enc");
    ok(&[
        "encode-dump",
        "--labels",
        p(&labels),
        "--width",
        "64",
        "--height",
        "64",
        "--out",
        p(&out),
    ]);
    let reg = std::fs::read_to_string(out.join("regression.csv")).unwrap();
    assert_eq!(reg.lines().count(), 3);
    let poles = ok(&["extract", "--heatmap", p(&out.join("heatmap.csv"))]);
    let rows: Vec<&str> = poles.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",1.000000")));
    let top1 = ok(&[
        "extract",
        "--heatmap",
        p(&out.join("heatmap.csv")),
        "--extractor",
        "topk",
        "--k",
        "1",
    ]);
    assert_eq!(top1.lines().count(), 2);
}
