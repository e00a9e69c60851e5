use std::path::Path;
use std::process::Command;

fn ljt(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ljt"))
        .current_dir(dir)
        .env("LJT_THREADS", "1")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "ljt {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// gen -> sample -> train -> infer, checked against exact inference on the
/// generating model.
#[test]
fn pipeline_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ljt(p, &["gen", "--family", "hmm2", "--size", "5", "--seed", "3", "--out", "model.json"]);
    ljt(p, &["sample", "--model", "model.json", "-n", "20000", "--seed", "1", "--out", "train.csv"]);
    ljt(p, &["sample", "--model", "model.json", "-n", "50", "--seed", "2", "--out", "test.csv"]);
    ljt(p, &["train", "--model", "model.json", "--samples", "train.csv", "--out", "params.json"]);
    let est = ljt(p, &["infer", "--params", "params.json", "--structure", "model.json", "--samples", "test.csv"]);
    let exact = ljt(p, &["infer", "--model", "model.json", "--samples", "test.csv"]);
    let col = |s: &str, k: usize| -> Vec<f64> { s.lines().skip(1).map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect() };
    assert!(est.starts_with("row,estimate,clamped"));
    let (e, x) = (col(&est, 2), col(&exact, 1));
    assert_eq!(e.len(), 50);
    let mean_rel: f64 = e.iter().zip(&x).map(|(a, b)| (a - b).abs() / b).sum::<f64>() / 50.0;
    assert!(mean_rel < 0.5, "{mean_rel}");

    ljt(p, &["train", "--model", "model.json", "--samples", "train.csv", "--learner", "em", "--restarts", "1", "--out", "em.json"]);
    let fitted = ljt(p, &["infer", "--model", "em.json", "--samples", "test.csv"]);
    assert_eq!(fitted.lines().count(), 51);

    let diag: serde_json::Value = serde_json::from_str(&ljt(p, &["diagnostics", "--model", "model.json"])).unwrap();
    assert!(diag["diagnostics"]["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn unknown_family_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ljt"))
        .args(["gen", "--family", "hmm9", "--out"])
        .arg(d.path().join("x.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
