use std::path::Path;
use std::process::{Command, Output};

fn topogan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topogan")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn pgm_dims(bytes: &[u8]) -> (usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..20]);
    let mut it = text.split_whitespace();
    assert_eq!(it.next(), Some("P5"));
    (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
}

#[test]
fn gen_writes_pgm_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen", "--nelx", "20", "--nely", "10", "--volfrac", "0.5", "--penal", "3", "--rmin", "1.5", "--out", "s.pgm"];
    let stdout = ok(&topogan(dir.path(), &args));
    let value = |key: &str| -> f64 {
        let line = stdout.lines().find(|l| l.starts_with(key)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!(value("compliance") > 0.0);
    let iters = value("iterations");
    assert!((1.0..=200.0).contains(&iters));
    assert!((value("volume_fraction") - 0.5).abs() <= 1e-3);
    let bytes = std::fs::read(dir.path().join("s.pgm")).unwrap();
    assert_eq!(pgm_dims(&bytes), (20, 10));
    assert_eq!(bytes.len(), "P5\n20 10\n255\n".len() + 200);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(topogan(d, &["gen", "--bogus", "1", "--out", "x.pgm"]).status.code(), Some(2));
    assert_eq!(topogan(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(topogan(d, &["gen", "--volfrac", "1.5", "--out", "x.pgm"]).status.code(), Some(2));
    std::fs::write(d.join("bad.cfg"), "nelx = 4\nwhat_is_this = 1\n").unwrap();
    assert_eq!(topogan(d, &["gen", "--config", "bad.cfg", "--out", "x.pgm"]).status.code(), Some(2));
    assert_eq!(topogan(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = topogan(dir.path(), &["eval", "--checkpoint", "missing.ckpt", "--condition", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
}

fn without_wall_time(metrics: &str) -> Vec<serde_json::Value> {
    metrics
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

#[test]
fn train_eval_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&topogan(d, &["synth", "--classes", "2", "--per-class", "6", "--size", "8", "--seed", "1", "--out", "d.topd"]));
    // the file asks for 9 steps; the command line wins
    std::fs::write(d.join("run.cfg"), "# small run\nplan = desk\nbatch_size = 4\nsteps = 9\nobjective = cgan\n").unwrap();
    for run in ["a", "b"] {
        let args = ["train", "--config", "run.cfg", "--objective", "crcgan-a", "--data", "d.topd", "--steps", "3", "--seed", "7", "--out", run];
        ok(&topogan(d, &args));
    }
    let ck_a = std::fs::read(d.join("a/final.ckpt")).unwrap();
    assert_eq!(ck_a, std::fs::read(d.join("b/final.ckpt")).unwrap());
    let ma = std::fs::read_to_string(d.join("a/metrics.jsonl")).unwrap();
    let mb = std::fs::read_to_string(d.join("b/metrics.jsonl")).unwrap();
    assert_eq!(ma.lines().count(), 3);
    assert_eq!(without_wall_time(&ma), without_wall_time(&mb));

    let eval = ["eval", "--checkpoint", "a/final.ckpt", "--condition", "1", "--count", "5", "--tol", "0.05", "--seed", "2"];
    let report = ok(&topogan(d, &eval));
    assert_eq!(report, ok(&topogan(d, &eval)));
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    for key in ["target", "count", "mean_vf", "mean_abs_err", "std_abs_err", "frac_within_tol", "per_sample", "checkpoint", "seed"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["objective"], "crcgan-a");
    assert_eq!(json["per_sample"].as_array().unwrap().len(), 5);
    assert_eq!(topogan(d, &["eval", "--checkpoint", "a/final.ckpt", "--condition", "2"]).status.code(), Some(2));

    ok(&topogan(d, &["sample", "--checkpoint", "a/final.ckpt", "--condition", "0", "--count", "6", "--cols", "3", "--out", "m.pgm"]));
    let m = std::fs::read(d.join("m.pgm")).unwrap();
    assert_eq!(pgm_dims(&m), (3 * 8 + 2 * 2, 2 * 8 + 2));

    // resuming to 5 steps appends two metric lines
    ok(&topogan(d, &["train", "--data", "d.topd", "--resume", "a/final.ckpt", "--steps", "5", "--out", "a"]));
    assert_eq!(std::fs::read_to_string(d.join("a/metrics.jsonl")).unwrap().lines().count(), 5);
    let clash = ["train", "--data", "d.topd", "--resume", "a/final.ckpt", "--lr", "0.1", "--out", "a"];
    assert_eq!(topogan(d, &clash).status.code(), Some(2));
}

#[test]
fn sweep_and_augment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&topogan(d, &["sweep", "--nelx", "8", "--nely", "4", "--volfracs", "0.4,0.6", "--out", "s.topd"]));
    assert!(out.starts_with("wrote 2 samples"), "{out}");
    let out = ok(&topogan(d, &["augment", "--data", "s.topd", "--out", "a.topd", "--seed", "3"]));
    assert!(out.starts_with("wrote 4 samples"), "{out}");
    let once = std::fs::read(d.join("a.topd")).unwrap();
    ok(&topogan(d, &["augment", "--data", "s.topd", "--out", "a.topd", "--seed", "3"]));
    assert_eq!(once, std::fs::read(d.join("a.topd")).unwrap());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&topogan(dir.path(), &["gradcheck", "--seed", "5"]));
    assert_eq!(out.lines().count(), 3);
}

fn idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend(d.to_be_bytes());
    }
    v.extend(payload);
    v
}

#[test]
fn idx_import_with_limit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pixels: Vec<u8> = (0..5 * 4 * 4).map(|i| (i * 3) as u8).collect();
    std::fs::write(d.join("img.idx"), idx(0x0803, &[5, 4, 4], &pixels)).unwrap();
    std::fs::write(d.join("lab.idx"), idx(0x0801, &[5], &[0, 1, 2, 3, 4])).unwrap();
    let out = ok(&topogan(d, &["idx-import", "--images", "img.idx", "--labels", "lab.idx", "--out", "m.topd"]));
    assert!(out.starts_with("wrote 5 samples (4x4)"), "{out}");
    let out = ok(&topogan(
        d,
        &["idx-import", "--images", "img.idx", "--labels", "lab.idx", "--downscale", "true", "--limit", "3", "--out", "m2.topd"],
    ));
    assert!(out.starts_with("wrote 3 samples (2x2)"), "{out}");
    std::fs::write(d.join("lab.idx"), idx(0x0801, &[4], &[0, 1, 2, 3])).unwrap();
    assert_eq!(topogan(d, &["idx-import", "--images", "img.idx", "--labels", "lab.idx", "--out", "x.topd"]).status.code(), Some(1));
}
