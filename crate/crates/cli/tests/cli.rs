use std::path::Path;
use std::process::{Command, Output};

use fastvit_core::archive::{load_tensor, save_tensor};
use fastvit_core::init::random_tensor;

fn fastvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastvit")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn build_fuse_verify_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (m, f) = (dir.path().join("m.fvwt"), dir.path().join("f.fvwt"));
    let o = fastvit(&["build", "--variant", "T8", "--seed", "42", "--out", p(&m), "--random-stats"]);
    assert!(o.status.success(), "{o:?}");
    let o = fastvit(&["fuse", "--in", p(&m), "--out", p(&f)]);
    assert!(o.status.success(), "{o:?}");
    assert!(std::fs::metadata(&f).unwrap().len() < std::fs::metadata(&m).unwrap().len());
    let o = fastvit(&["verify", "--train", p(&m), "--fused", p(&f), "--size", "64", "--inputs", "2", "--tol", "1e-4"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("max_abs_deviation"));
}

#[test]
fn verify_fails_on_unrelated_models() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.fvwt"), dir.path().join("b.fvwt"));
    assert!(fastvit(&["build", "--variant", "T8", "--seed", "1", "--out", p(&a), "--random-stats"]).status.success());
    assert!(fastvit(&["build", "--variant", "T8", "--seed", "2", "--out", p(&b), "--mode", "inference", "--random-stats"])
        .status
        .success());
    let o = fastvit(&["verify", "--train", p(&a), "--fused", p(&b), "--size", "64", "--inputs", "1", "--tol", "1e-9"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
}

#[test]
fn identical_commands_give_identical_archives() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.fvwt"), dir.path().join("b.fvwt"));
    for out in [&a, &b] {
        assert!(fastvit(&["build", "--variant", "T8", "--seed", "3", "--out", p(out)]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn stats_json_reports_t8_parameter_count() {
    let o = fastvit(&["stats", "--variant", "T8", "--json"]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let params = v["params"].as_f64().unwrap();
    assert!((params / 3.6e6 - 1.0).abs() < 0.1, "{params}");
    assert!(v["rows"].as_array().unwrap().len() > 10);
    let table = fastvit(&["stats", "--variant", "SA12", "--size", "224", "--mode", "train"]);
    assert!(stdout(&table).contains("stages.3.blocks.0.mixer.qkv"));
}

#[test]
fn usage_errors_exit_with_2() {
    for args in [
        vec!["build", "--variant", "nosuch", "--out", "x.fvwt"],
        vec!["build", "--variant", "T8", "--out", "x.fvwt", "--bogus"],
        vec!["frobnicate"],
        vec!["stats", "--variant", "T8", "--mode", "sideways"],
    ] {
        let o = fastvit(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = fastvit(&["fuse", "--in", p(&dir.path().join("missing.fvwt")), "--out", p(&dir.path().join("o.fvwt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn forward_writes_logits() {
    let dir = tempfile::tempdir().unwrap();
    let (m, x, y) = (dir.path().join("m.fvwt"), dir.path().join("x.fvwt"), dir.path().join("y.fvwt"));
    assert!(fastvit(&["build", "--variant", "T8", "--out", p(&m), "--mode", "inference"]).status.success());
    save_tensor(&x, "input", &random_tensor([2, 3, 64, 64], 0)).unwrap();
    let o = fastvit(&["forward", "--model", p(&m), "--input", p(&x), "--out", p(&y)]);
    assert!(o.status.success(), "{o:?}");
    let (name, logits) = load_tensor(&y).unwrap();
    assert_eq!(name, "logits");
    assert_eq!(logits.dims(), [2, 1000, 1, 1]);

    save_tensor(&x, "input", &random_tensor([1, 3, 50, 64], 0)).unwrap();
    let o = fastvit(&["forward", "--model", p(&m), "--input", p(&x), "--out", p(&y)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pad or resize"));
}

#[test]
fn bench_writes_csv_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = fastvit(&[
        "bench", "--variant", "T8", "--sizes", "64,96", "--iters", "2", "--warmup", "0", "--csv", p(&csv), "--baseline",
        "pooling", "--threads", "1",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("T8/T8-pooling"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,mode,size,batch,iters,median_ms,p10_ms,p90_ms,threads");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("T8,inference,64,1,2,") && lines[1].ends_with(",1"));
    assert!(dir.path().join("b.csv.samples.csv").exists());
}

#[test]
fn bench_reports_bad_sizes_but_measures_the_rest() {
    let o = fastvit(&["bench", "--variant", "T8", "--sizes", "64,70", "--iters", "1", "--warmup", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("error") && out.contains("64"), "{out}");
}
