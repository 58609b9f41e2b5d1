use std::path::Path;
use std::process::{Command, Output};

use gelatto_core::data::{read_cloud, read_record};

fn gelatto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gelatto")).args(args).env("GELATTO_THREADS", "2").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gelatto(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    gelatto(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesizes a small scene set and returns the run configuration path.
fn synth(dir: &Path, scenes: usize, points: usize) -> String {
    let n = scenes.to_string();
    let pts = points.to_string();
    ok(&["synth", "--out", p(dir), "--train-scenes", &n, "--test-scenes", "2", "--points", &pts]);
    p(&dir.join("run.toml")).to_string()
}

/// Epoch lines with the wall-clock field removed.
fn losses(log: &str) -> Vec<String> {
    log.lines().map(|l| l.split(" secs=").next().unwrap().to_string()).collect()
}

fn field(line: &str, key: &str) -> f64 {
    line.split_whitespace().find_map(|t| t.strip_prefix(&format!("{key}="))).unwrap().parse().unwrap()
}

#[test]
fn deterministic_training_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 4, 300);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["train", "--config", &cfg, "--out", p(&out), "--epochs", "2", "--points", "256", "--deterministic", "--seed", "5"]);
        std::fs::read_to_string(out.join("train.log")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(losses(&a).len(), 2);
    assert_eq!(losses(&a), losses(&b));
    for f in ["final.ckpt", "best.ckpt", "run.toml"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    // the log is append-only
    let again = dir.path().join("a");
    ok(&["train", "--config", &cfg, "--out", p(&again), "--epochs", "1", "--points", "256"]);
    assert_eq!(std::fs::read_to_string(again.join("train.log")).unwrap().lines().count(), 3);
}

#[test]
fn zero_aux_weight_leaves_main_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 2, 200);
    let out = dir.path().join("run");
    let stdout = ok(&["train", "--config", &cfg, "--out", p(&out), "--epochs", "1", "--points", "128", "--aux-weight", "0"]);
    let line = stdout.lines().next().unwrap();
    assert_eq!(field(line, "loss"), field(line, "main"));
    let aux = line.split_whitespace().find_map(|t| t.strip_prefix("aux=")).unwrap();
    assert!(aux.split(',').all(|a| a.parse::<f64>().unwrap() > 0.0));
}

#[test]
fn training_improves_on_the_training_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 6, 512);
    let out = dir.path().join("run");
    let train = p(&dir.path().join("train")).to_string();
    let stdout = ok(&[
        "train", "--config", &cfg, "--out", p(&out), "--epochs", "30", "--points", "512", "--eval", &train,
    ]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 30);
    let first = field(lines[0], "eval_miou");
    let last = field(lines[29], "eval_miou");
    assert!(last > first, "{first} -> {last}");
}

#[test]
fn eval_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 2, 400);
    let out = dir.path().join("run");
    // zero epochs keeps the initial weights
    ok(&["train", "--config", &cfg, "--out", p(&out), "--epochs", "0"]);
    let ckpt = out.join("final.ckpt");
    let report = ok(&["eval", "--config", &cfg, "--checkpoint", p(&ckpt), "--out", p(&dir.path().join("ev"))]);
    assert!(report.lines().next().unwrap().contains("mIoU"));
    assert!(report.contains("sphere"));
    let oa: f64 = report.lines().find_map(|l| l.strip_prefix("oa=")).unwrap().parse().unwrap();
    assert!((oa - 1.0 / 3.0).abs() <= 0.15, "untrained OA {oa}");
    assert!(dir.path().join("ev/metrics.txt").exists());

    let input = dir.path().join("test/scene_001.txt");
    let pred = |name: &str| {
        let path = dir.path().join(name);
        ok(&["predict", "--config", &cfg, "--checkpoint", p(&ckpt), "--input", p(&input), "--output", p(&path)]);
        read_cloud(&path, Some(3)).unwrap()
    };
    let (a, b) = (pred("a.txt"), pred("b.txt"));
    let orig = read_cloud(&input, None).unwrap();
    assert_eq!(a.positions, orig.positions);
    assert_eq!(a.labels, b.labels);
    assert!(a.labels.unwrap().iter().all(|&l| l < 3));
}

#[test]
fn gradcheck_reports() {
    let clean = ok(&["gradcheck"]);
    assert!(clean.contains("gradcheck passed"));
    let out = gelatto(&["gradcheck", "--inject-fault", "linear"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    let worst = text.lines().find(|l| l.starts_with("worst ")).unwrap();
    let err: f64 = worst.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(err > 1e-4, "{worst}");
    assert!(text.lines().next().unwrap().starts_with("FAIL"));
}

#[test]
fn attention_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 1, 300);
    let out = dir.path().join("run");
    ok(&["train", "--config", &cfg, "--out", p(&out), "--epochs", "0"]);
    let input = dir.path().join("test/scene_000.txt");
    let att = dir.path().join("att");
    let report = ok(&[
        "dump-attention", "--config", &cfg, "--checkpoint", p(&out.join("final.ckpt")), "--input", p(&input),
        "--point", "0", "--out", p(&att),
    ]);
    let cloud = read_cloud(&input, None).unwrap();
    let mut files = 0;
    for line in report.lines().filter(|l| l.starts_with("level=")) {
        let level = line.split_whitespace().next().unwrap().trim_start_matches("level=");
        let kind = line.split_whitespace().nth(1).unwrap().trim_start_matches("block=");
        let radius = field(line, "radius");
        for head in ["geometric", "latent"] {
            let rec = read_record(&att.join(format!("attention_l{level}_{kind}_{head}.txt")), None).unwrap();
            let s: f64 = rec.scalars.unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            let c = cloud.positions[0];
            for q in &rec.cloud.positions {
                let d = ((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2) + (q[2] - c[2]).powi(2)).sqrt();
                assert!(d <= radius + 1e-9);
            }
            files += 1;
        }
    }
    assert!(files >= 2);
    assert!(att.join("attention_union_geometric.txt").exists());
    assert!(report.contains("eliminated_at_level="));
}

#[test]
fn single_neighbour_scores_are_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path(), 1, 300);
    let out = dir.path().join("run");
    ok(&["train", "--config", &cfg, "--out", p(&out), "--epochs", "0", "--k", "1"]);
    let att = dir.path().join("att");
    ok(&[
        "dump-attention", "--config", &cfg, "--checkpoint", p(&out.join("final.ckpt")), "--input",
        p(&dir.path().join("test/scene_000.txt")), "--point", "3", "--channel", "0", "--out", p(&att),
    ]);
    let rec = read_record(&att.join("attention_l1_strided_geometric.txt"), None).unwrap();
    assert_eq!(rec.scalars.unwrap(), vec![1.0]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--epochs", "x"]), 1);
    assert_eq!(code(&["train", "--heads", "three"]), 1);
    assert_eq!(code(&["train"]), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "nonsense = 1\n").unwrap();
    assert_eq!(code(&["gradcheck", "--config", p(&bad)]), 1);
    assert_eq!(code(&["eval", "--checkpoint", p(&dir.path().join("missing.ckpt")), "--data", p(dir.path())]), 2);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["train", "--train", p(&empty), "--out", p(dir.path())]), 2);
    std::fs::write(empty.join("x.txt"), "pts 1 cols xyzl\n0 0 0 7\n").unwrap();
    assert_eq!(code(&["train", "--train", p(&empty), "--out", p(dir.path())]), 2);
    assert_eq!(code(&["--help"]), 0);
}
