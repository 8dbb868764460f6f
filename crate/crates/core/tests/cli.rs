use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chronoskill"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_bundled_league_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(&[
        "fit",
        "--data",
        path_str(&data("league.csv")),
        "--schema",
        path_str(&data("schema.json")),
        "--model",
        path_str(&data("model.json")),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout_json(&o);
    assert_eq!(report["converged"], Value::Bool(true));
    assert!(report["iterations"].as_u64().unwrap() < 100);
    // one progress line per iteration
    let lines = String::from_utf8_lossy(&o.stderr).lines().count() as u64;
    assert!(lines >= report["iterations"].as_u64().unwrap());
    let fitted: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(fitted["snapshot"]["observations"].as_array().unwrap().len(), 800);
}

#[test]
fn malformed_kernel_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    std::fs::write(
        &model,
        r#"{"likelihood": {"likelihood": "probit"}, "competitor": {"type": "matern12", "var": 1.0, "lengthscale": 2.0}}"#,
    )
    .unwrap();
    let o = run(&[
        "fit",
        "--data",
        path_str(&data("league.csv")),
        "--model",
        path_str(&model),
        "--out",
        path_str(&dir.path().join("x.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lengthscale"));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn data_errors_and_non_convergence_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "t,comp_i,comp_j,outcome\n2020-01-01,a,b,1\n2020-01-02,a,b,0\n").unwrap();
    let o = run(&[
        "fit",
        "--data",
        path_str(&csv),
        "--model",
        path_str(&data("model.json")),
        "--out",
        path_str(&dir.path().join("x.json")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = run(&[
        "--quiet",
        "fit",
        "--data",
        path_str(&data("league.csv")),
        "--model",
        path_str(&data("model.json")),
        "--out",
        path_str(&dir.path().join("x.json")),
        "--max-iter",
        "1",
        "--tolerance",
        "1e-12",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(o.stderr.is_empty());
}

#[test]
fn snapshots_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("fit{threads}.json"));
        let o = run(&[
            "--threads",
            threads,
            "--quiet",
            "fit",
            "--data",
            path_str(&data("league.csv")),
            "--schema",
            path_str(&data("schema.json")),
            "--model",
            path_str(&data("model.json")),
            "--out",
            path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        files.push(std::fs::read(&out).unwrap());
    }
    assert!(files[0] == files[1]);
}

#[test]
fn baselines_and_stored_predictions() {
    let league = data("league.csv");
    let o = run(&["evaluate", "--data", path_str(&league), "--baseline", "random"]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout_json(&o);
    assert!((r["log_loss"].as_f64().unwrap() - 0.6931).abs() < 1e-4);
    assert_eq!(r["n"].as_u64(), Some(240));

    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("elo.csv");
    let args = [
        "evaluate",
        "--data",
        path_str(&league),
        "--baseline",
        "elo",
        "--lr",
        "0.262",
        "--predictions",
        path_str(&preds),
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let r = stdout_json(&a);
    let stored = chronoskill::cli::reevaluate(&preds).unwrap();
    assert_eq!(r["log_loss"].as_f64().unwrap(), stored.log_loss);
    assert_eq!(r["accuracy"].as_f64().unwrap(), stored.accuracy);

    let o = run(&["evaluate", "--data", path_str(&league), "--baseline", "elo"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fitted_model_evaluates_on_held_out_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let o = run(&[
        "--quiet",
        "fit",
        "--data",
        path_str(&data("league.csv")),
        "--model",
        path_str(&data("model.json")),
        "--out",
        path_str(&out),
        "--train-fraction",
        "0.7",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["evaluate", "--data", path_str(&data("league.csv")), "--snapshot", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["n"].as_u64(), Some(240));
    assert!(r["log_loss"].as_f64().unwrap() < 2f64.ln());
}

#[test]
fn search_is_reproducible() {
    let (league, space) = (data("league.csv"), data("space.json"));
    let args = [
        "--seed",
        "7",
        "search",
        "--data",
        path_str(&league),
        "--space",
        path_str(&space),
        "--n",
        "3",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let ranked = stdout_json(&a);
    let ranked = ranked.as_array().unwrap();
    assert_eq!(ranked.len(), 3);
    assert_eq!(ranked[0]["rank"].as_u64(), Some(1));
}

#[test]
fn export_writes_the_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let fit = dir.path().join("fit.json");
    let o = run(&[
        "--quiet",
        "fit",
        "--data",
        path_str(&data("league.csv")),
        "--model",
        path_str(&data("model.json")),
        "--out",
        path_str(&fit),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = dir.path().join("traj.csv");
    let o = run(&[
        "export",
        "--snapshot",
        path_str(&fit),
        "--features",
        "c0,c1",
        "--start",
        "0",
        "--end",
        "3",
        "--step",
        "3",
        "--out",
        path_str(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(&csv).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rd.headers().unwrap(), vec!["feature", "t", "mean", "std"]);
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[0][0], "c0");
    assert_eq!(&rows[3][0], "c1");
    assert_eq!(&rows[1][1], "3.0");
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() > 0.0));

    let o = run(&["export", "--snapshot", path_str(&fit), "--features", "nobody"]);
    assert_eq!(o.status.code(), Some(2));
}
