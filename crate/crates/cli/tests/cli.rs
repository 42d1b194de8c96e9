use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bsdh_core::data::load_codes;
use bsdh_core::retrieval::hamming_distance;

fn bsdh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsdh"))
        .args(args)
        .env("BSDH_WORKERS", "2")
        .output()
        .expect("failed to launch bsdh")
}

fn ok(args: &[&str]) -> String {
    let out = bsdh(args);
    assert!(
        out.status.success(),
        "bsdh {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails(args: &[&str]) -> String {
    let out = bsdh(args);
    assert!(!out.status.success(), "bsdh {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k")
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["synth", "--out", s(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

fn metric(dir: &Path, name: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let line = text
        .lines()
        .find(|l| l.split(',').nth(2) == Some(name))
        .unwrap_or_else(|| panic!("no {name} row in {text}"));
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn zero_bits_is_rejected_before_loading_data() {
    let err = fails(&["train", "--data", "/nonexistent/set.b2f", "--bits", "0", "--out", "/nonexistent/run"]);
    assert!(err.contains("code length"), "{err}");
    let err = fails(&["train", "--data", "/nonexistent/set.b2f", "--lambda=-1", "--out", "/nonexistent/run"]);
    assert!(err.contains("lambda"), "{err}");
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "toy.b2f", &["--n", "80", "--d1", "6", "--d2", "5", "--labels", "3", "--labels-per-sample", "2"]);
    let train = |name: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "train", "--data", s(&data), "--n-train", "60", "--n-query", "10", "--bits", "12", "--c1", "3", "--c2", "3",
            "--seed", "4", "--out", s(&out),
        ]);
        out
    };
    let (a, b) = (train("a"), train("b"));
    for file in ["codes.bsdc", "model.bsdh", "trace.csv", "train_indices.txt", "query_indices.txt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file} differs");
    }
}

#[test]
fn mnist_training_writes_a_complete_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&mnist_dir()), "--n-train", "400", "--n-query", "50", "--bits", "16", "--out", s(&out),
    ]);
    for file in ["manifest.txt", "model.bsdh", "codes.bsdc", "trace.csv", "train_indices.txt", "query_indices.txt"] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    let trace: Vec<f64> = std::fs::read_to_string(out.join("trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!trace.is_empty());
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "objective rose: {trace:?}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("c1 = 14") && manifest.contains("data.d1 = 28"), "{manifest}");
    assert_eq!(load_codes(&out.join("codes.bsdc")).unwrap().len(), 400);

    let eval = tmp.path().join("eval");
    let stdout = ok(&["eval", "--run", s(&out), "--out", s(&eval)]);
    assert!(stdout.contains("MAP"));
    let map = metric(&eval, "map");
    assert!(map > 0.2 && map <= 1.0, "MAP {map}");
    assert!(eval.join("pr_curve.csv").is_file());
}

#[test]
fn separable_toy_set_retrieves_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "toy.b2f", &["--n", "40", "--d1", "4", "--d2", "4", "--labels", "2", "--noise", "0.05", "--seed", "13"]);
    let run = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--n-train", "40", "--n-query", "0", "--bits", "8", "--c1", "2", "--c2", "2",
        "--out", s(&run),
    ]);
    assert!(std::fs::read_to_string(run.join("manifest.txt")).unwrap().contains("converged = true"));
    let eval = tmp.path().join("eval");
    let train_indices = run.join("train_indices.txt");
    ok(&["eval", "--run", s(&run), "--query-indices", s(&train_indices), "--out", s(&eval)]);
    let map = metric(&eval, "map");
    assert!(map >= 0.99, "self-retrieval MAP {map}");
    let err = fails(&["eval", "--run", s(&run), "--out", s(&eval)]);
    assert!(err.contains("empty"), "{err}");
}

#[test]
fn database_order_does_not_change_map_without_ties() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "toy.b2f", &["--n", "12", "--d1", "6", "--d2", "6", "--labels", "3", "--noise", "1.0", "--seed", "4"]);
    let run = tmp.path().join("run");
    ok(&["train", "--method", "lsh", "--data", s(&data), "--n-train", "8", "--n-query", "4", "--bits", "64", "--out", s(&run)]);

    // precondition: every query sees distinct distances to the database
    let codes = tmp.path().join("all.bsdc");
    ok(&["encode", "--run", s(&run), "--out", s(&codes)]);
    let all = load_codes(&codes).unwrap();
    let read = |f: &str| -> Vec<usize> {
        std::fs::read_to_string(run.join(f)).unwrap().lines().map(|l| l.parse().unwrap()).collect()
    };
    let (db, queries) = (read("train_indices.txt"), read("query_indices.txt"));
    for &q in &queries {
        let mut d: Vec<u32> = db.iter().map(|&i| hamming_distance(all.code(q), all.code(i), 64).unwrap()).collect();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), db.len(), "query {q} has tied distances; pick another seed");
    }

    let forward = tmp.path().join("forward");
    ok(&["eval", "--run", s(&run), "--out", s(&forward)]);
    let mut shuffled = db.clone();
    shuffled.reverse();
    shuffled.rotate_left(3);
    let order = tmp.path().join("shuffled.txt");
    std::fs::write(&order, shuffled.iter().map(|i| format!("{i}\n")).collect::<String>()).unwrap();
    let permuted = tmp.path().join("permuted");
    ok(&["eval", "--run", s(&run), "--database-indices", s(&order), "--out", s(&permuted)]);
    assert_eq!(metric(&forward, "map"), metric(&permuted, "map"));
}

#[test]
fn sweep_fills_the_grid_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "toy.b2f", &["--n", "90", "--labels", "3", "--labels-per-sample", "2", "--seed", "1"]);
    let out = tmp.path().join("sweep");
    let args = [
        "sweep", "--data", s(&data), "--n-train", "70", "--n-query", "20", "--lambdas", "0.001,1", "--mus", "0.1",
        "--c1s", "3", "--c2s", "3", "--bits-list", "8,16", "--out", s(&out),
    ];
    let first = ok(&args);
    assert!(first.contains("4 cells computed"), "{first}");
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().collect();
    assert_eq!(rows[0], "lambda,mu,c1,c2,bits,map,status");
    assert_eq!(rows.len(), 5, "{results}");
    assert!(rows[1..].iter().all(|r| r.ends_with(",ok")), "{results}");

    let second = ok(&args);
    assert!(second.contains("0 cells computed, 4 already present"), "{second}");
    assert_eq!(std::fs::read_to_string(out.join("results.csv")).unwrap(), results);
}

#[test]
fn failing_sweep_cells_are_recorded_and_the_rest_continue() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "toy.b2f", &["--n", "50", "--d1", "4", "--d2", "4", "--labels", "2"]);
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--data", s(&data), "--n-train", "40", "--n-query", "10", "--c1s", "2,9", "--c2s", "2", "--bits-list", "8",
        "--out", s(&out),
    ]);
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{results}");
    assert!(rows[0].ends_with(",ok"));
    assert!(rows[1].contains("error"), "{results}");
}

#[test]
fn missing_or_damaged_runs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let err = fails(&["eval", "--run", s(tmp.path()), "--out", s(&tmp.path().join("e"))]);
    assert!(err.starts_with("error:") && err.contains("manifest"), "{err}");

    let data = synth(tmp.path(), "toy.b2f", &["--n", "40", "--d1", "4", "--d2", "4", "--labels", "2"]);
    let run = tmp.path().join("run");
    ok(&["train", "--data", s(&data), "--n-train", "30", "--n-query", "10", "--bits", "8", "--c1", "2", "--c2", "2", "--out", s(&run)]);
    std::fs::write(run.join("model.bsdh"), b"BSDH\x07\0\0\0").unwrap();
    let err = fails(&["encode", "--run", s(&run), "--out", s(&tmp.path().join("c.bsdc"))]);
    assert!(err.contains("model.bsdh"), "{err}");
    std::fs::remove_file(run.join("model.bsdh")).unwrap();
    fails(&["encode", "--run", s(&run), "--out", s(&tmp.path().join("c.bsdc"))]);

    let err = fails(&["train", "--data", s(&data), "--c1", "5", "--out", s(&tmp.path().join("r2"))]);
    assert!(err.contains("exceeds"), "{err}");
    let err = fails(&["train", "--data", s(&tmp.path().join("absent.b2f")), "--out", s(&tmp.path().join("r3"))]);
    assert!(err.contains("does not exist"), "{err}");
    std::fs::write(tmp.path().join("plain.txt"), "x").unwrap();
    let err = fails(&["train", "--data", s(&tmp.path().join("plain.txt")), "--out", s(&tmp.path().join("r4"))]);
    assert!(err.contains("neither"), "{err}");
}

#[test]
fn baseline_methods_train_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "toy.b2f", &["--n", "100", "--labels", "4", "--noise", "0.3", "--seed", "2"]);
    for method in ["lsh", "bpbc"] {
        let run = tmp.path().join(method);
        ok(&["train", "--method", method, "--data", s(&data), "--n-train", "80", "--n-query", "20", "--bits", "16", "--out", s(&run)]);
        assert!(run.join("baseline.txt").is_file());
        assert!(!run.join("model.bsdh").exists());
        let eval = tmp.path().join(format!("{method}-eval"));
        ok(&["eval", "--run", s(&run), "--encode-all", "--k-grid", "1,5,500", "--out", s(&eval)]);
        let map = metric(&eval, "map");
        assert!(map > 0.0 && map <= 1.0, "{method} MAP {map}");
        // stored training codes must agree with a fresh encoding
        let reused = tmp.path().join(format!("{method}-reused"));
        ok(&["eval", "--run", s(&run), "--out", s(&reused)]);
        assert_eq!(metric(&reused, "map"), map);
        let ks: Vec<String> = std::fs::read_to_string(eval.join("metrics.csv"))
            .unwrap()
            .lines()
            .filter(|l| l.contains(",precision,"))
            .map(|l| l.split(',').nth(3).unwrap().to_string())
            .collect();
        assert_eq!(ks, ["1", "5", "80"]);
    }
}
