use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use landscape_core::grid::subsample_indices;
use landscape_core::{model_loss, parse_csv, synth_dataset, DatasetKind, EvalConfig, LossKind, ModelParameters, Network, Subsample};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_landscape"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, want, "{name} changed; rerun with UPDATE_GOLDEN=1 if intended");
}

#[test]
fn help_output_is_stable() {
    let dir = TempDir::new().unwrap();
    golden("help.txt", &ok(&run(&["--help"], dir.path())));
    golden("compute-help.txt", &ok(&run(&["compute", "--help"], dir.path())));
    golden("case-study-help.txt", &ok(&run(&["case-study", "--help"], dir.path())));
    golden("serve-help.txt", &ok(&run(&["serve", "--help"], dir.path())));
}

const DENSE: &str = "input 64\ndense 64 8\nrelu\ndense 8 4\n";

fn write_model(dir: &Path) -> PathBuf {
    let path = dir.join("model.txt");
    fs::write(&path, DENSE).unwrap();
    path
}

fn write_weights(dir: &Path, seed: u64) -> (PathBuf, ModelParameters) {
    let network: Network = DENSE.parse().unwrap();
    let params = ModelParameters::init_he(&network, seed);
    let path = dir.join("weights.json");
    fs::write(&path, serde_json::to_string(&params).unwrap()).unwrap();
    (path, params)
}

#[test]
fn exit_codes_separate_bad_input_from_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    let m = model.to_str().unwrap();
    let code = |args: &[&str]| run(args, dir.path()).status.code();
    assert_eq!(code(&["compute", "--model", m, "--train", "--dataset", "blobs:50:1", "--grid", "1:2:3"]), Some(1));
    assert_eq!(code(&["compute", "--model", "missing.txt", "--train", "--dataset", "blobs:50:1"]), Some(1));
    assert_eq!(code(&["compute", "--model", m, "--dataset", "blobs:50:1"]), Some(1), "needs --weights or --train");
    assert_eq!(code(&["compute", "--model", m, "--train", "--dataset", "blobs:50:1", "--subsample", "51"]), Some(1));
    assert_eq!(code(&["stats", "nope.csv"]), Some(1));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["--version"]), Some(0));

    let out = run(
        &["compute", "--model", m, "--train", "--lr", "1e300", "--loss", "mse", "--dataset", "blobs:50:1", "--subsample", "full", "--grid", "-1:1:-1:1:3:3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("diverged") && err.contains("learning_rate"), "{err}");

    fs::write(dir.path().join("bad.csv"), "id,x,y,loss\na,0,0,1\na,0,0,2\n").unwrap();
    let out = run(&["stats", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv: line 3: duplicate point"));
}

#[test]
fn single_point_grid_is_the_model_loss() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    let (weights, params) = write_weights(dir.path(), 9);
    let out = run(
        &[
            "compute", "--model", model.to_str().unwrap(), "--weights", weights.to_str().unwrap(),
            "--dataset", "blobs:300:2", "--grid", "0:0:0:0:1:1", "--subsample", "40", "--seed", "5", "--out", "one.csv",
        ],
        dir.path(),
    );
    ok(&out);
    let text = fs::read_to_string(dir.path().join("one.csv")).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    let e = parse_csv(text.as_bytes()).unwrap();

    let network: Network = DENSE.parse().unwrap();
    let data = synth_dataset(DatasetKind::Blobs, 300, 2).unwrap();
    let cfg = EvalConfig { subsample: Subsample::Count(40), subsample_seed: 5, loss_kind: LossKind::CrossEntropy };
    let subset = data.select(&subsample_indices(300, &cfg).unwrap());
    let want = model_loss(&network, &params, subset.inputs(), subset.targets(), LossKind::CrossEntropy).unwrap();
    assert_eq!(e[0].grid.losses()[0].to_bits(), want.to_bits());
}

#[test]
fn compute_is_deterministic_and_replayable() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    let args = |out: &'static str, workers: &'static str| {
        vec![
            "compute".to_string(), "--model".into(), model.to_str().unwrap().into(), "--train".into(), "--epochs".into(),
            "2".into(), "--dataset".into(), "blobs:200:3".into(), "--grid".into(), "-1:1:-0.5:0.5:9:7".into(),
            "--seed".into(), "4".into(), "--workers".into(), workers.into(), "--out".into(), out.into(),
        ]
    };
    let call = |a: Vec<String>| run(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    ok(&call(args("a.csv", "1")));
    ok(&call(args("b.csv", "3")));
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());

    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("a.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "compute");
    assert_eq!(manifest["config"]["direction_seed"], 4);
    assert_eq!(manifest["config"]["eval"]["subsample"], 100);
    assert_eq!(manifest["config"]["weights"]["config"]["epochs"], 2);
    assert!(manifest["duration_secs"].as_f64().unwrap() >= 0.0);

    let out = ok(&run(&["replay", "--verify", "a.manifest.json"], dir.path()));
    assert!(out.contains("identical"), "{out}");
    fs::remove_file(dir.path().join("a.csv")).unwrap();
    ok(&run(&["replay", "a.manifest.json"], dir.path()));
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), a);
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = TempDir::new().unwrap();
    fs::copy(repo_file("samples/sample.csv"), dir.path().join("s.csv")).unwrap();
    ok(&run(&["clip", "s.csv", "--radius", "auto", "--out", "c.csv"], dir.path()));
    ok(&run(&["replay", "--verify", "c.manifest.json"], dir.path()));
    fs::write(dir.path().join("s.csv"), "id,x,y,loss\nz,0,0,1\n").unwrap();
    let out = run(&["replay", "--verify", "c.manifest.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn train_then_compute_from_weights() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path());
    let m = model.to_str().unwrap();
    let out = ok(&run(&["train", "--model", m, "--dataset", "blobs:200:1", "--epochs", "3", "--out", "w.json"], dir.path()));
    assert!(out.contains("epoch 2"));
    assert!(dir.path().join("w.manifest.json").exists());
    ok(&run(&["compute", "--model", m, "--weights", "w.json", "--dataset", "blobs:200:1", "--grid", "-1:1:-1:1:5:5"], dir.path()));
    let e = parse_csv(fs::File::open(dir.path().join("landscape.csv")).unwrap()).unwrap();
    assert_eq!(e[0].grid.losses().len(), 25);
}

#[test]
fn stats_and_clip_on_the_sample() {
    let dir = TempDir::new().unwrap();
    fs::copy(repo_file("samples/sample.csv"), dir.path().join("s.csv")).unwrap();
    let json: Value = serde_json::from_str(&ok(&run(&["stats", "s.csv", "--json"], dir.path()))).unwrap();
    let quad = json.as_array().unwrap().iter().find(|e| e["id"] == "quadratic").unwrap();
    assert_eq!((quad["stats"]["argmin_x"].as_f64(), quad["stats"]["argmin_y"].as_f64()), (Some(0.0), Some(0.0)));

    ok(&run(&["clip", "s.csv", "--radius", "auto", "--out", "once.csv"], dir.path()));
    let once = fs::read_to_string(dir.path().join("once.csv")).unwrap();
    let demo_nan = once.lines().filter(|l| l.starts_with("demo,") && l.ends_with(",NaN")).count();
    assert_eq!(demo_nan, 4);
    ok(&run(&["clip", "once.csv", "--radius", "auto", "--out", "twice.csv"], dir.path()));
    assert_eq!(once, fs::read_to_string(dir.path().join("twice.csv")).unwrap());
}

/// Mean |5-point Laplacian| straight from CSV rows, independent of the crate.
fn laplacian_from_csv(text: &str, id: &str) -> f64 {
    let mut pts: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0] == id).then(|| (f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap()))
        })
        .collect();
    pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let nx = xs.len();
    let ny = pts.len() / nx;
    let f = |i: usize, j: usize| pts[j * nx + i].2;
    let (mut total, mut n) = (0.0, 0);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            total += (f(i + 1, j) + f(i - 1, j) + f(i, j + 1) + f(i, j - 1) - 4.0 * f(i, j)).abs();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn case_studies_are_structured_and_deterministic() {
    let dir = TempDir::new().unwrap();
    for (study, ids) in [("skip-connections", vec!["noskip", "skip"]), ("batch-size", vec!["batch-80", "batch-8", "batch-800"])] {
        ok(&run(&["case-study", study, "--out-dir", "one"], dir.path()));
        ok(&run(&["case-study", study, "--out-dir", "two"], dir.path()));
        let csv = format!("{study}.csv");
        let report = format!("{study}-smoothness.json");
        let text = fs::read_to_string(dir.path().join("one").join(&csv)).unwrap();
        assert_eq!(text.as_bytes(), fs::read(dir.path().join("two").join(&csv)).unwrap());
        assert_eq!(fs::read(dir.path().join("one").join(&report)).unwrap(), fs::read(dir.path().join("two").join(&report)).unwrap());

        let experiments = parse_csv(text.as_bytes()).unwrap();
        let mut got: Vec<&str> = experiments.iter().map(|e| e.id.as_str()).collect();
        let mut want = ids.clone();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(experiments.iter().all(|e| e.grid.same_plane(&experiments[0].grid)));

        let report: Value = serde_json::from_slice(&fs::read(dir.path().join("one").join(&report)).unwrap()).unwrap();
        let entries = report["experiments"].as_array().unwrap();
        assert_eq!(entries.len(), ids.len());
        for entry in entries {
            let id = entry["id"].as_str().unwrap();
            let reported = entry["mean_abs_laplacian"].as_f64().unwrap();
            let recomputed = laplacian_from_csv(&text, id);
            assert!((reported - recomputed).abs() <= 1e-12 * recomputed.abs().max(1.0), "{id}: {reported} vs {recomputed}");
        }
        let manifest = dir.path().join("one").join(format!("{study}.manifest.json"));
        let out = ok(&run(&["replay", "--verify", manifest.to_str().unwrap()], dir.path()));
        assert_eq!(out.matches("identical").count(), 2, "{out}");
    }
}

struct Served {
    child: Child,
    url: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn serve(data_dir: &Path, port: u16) -> Served {
    let mut child = bin()
        .args(["serve", "--open", "--workers", "1", "--port", &port.to_string(), "--data-dir"])
        .arg(data_dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("open ").unwrap_or_else(|| panic!("unexpected: {line}")).trim_end_matches('/').to_string();
    Served { child, url }
}

#[tokio::test]
async fn serve_lists_preloaded_csvs_and_serves_grids() {
    let data = TempDir::new().unwrap();
    fs::copy(repo_file("samples/sample.csv"), data.path().join("sample.csv")).unwrap();
    let port = free_port();
    let server = serve(data.path(), port);
    let client = reqwest::Client::new();
    let deadline = Instant::now() + Duration::from_secs(20);
    let list: Value = loop {
        match client.get(format!("{}/api/experiments", server.url)).send().await {
            Ok(r) => break r.json().await.unwrap(),
            Err(_) if Instant::now() < deadline => tokio::time::sleep(Duration::from_millis(50)).await,
            Err(e) => panic!("server never came up: {e}"),
        }
    };
    let mut ids: Vec<&str> = list.as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    ids.sort();
    assert_eq!(ids, ["demo", "quadratic"]);
    let grid: Value = client.get(format!("{}/api/experiments/demo/grid?clip=auto&contours=1", server.url)).send().await.unwrap().json().await.unwrap();
    assert_eq!(grid["losses"][0][0], Value::Null);
    assert_eq!(grid["losses"][1][1], 0.0);
    assert_eq!(grid["contours"], serde_json::json!([0.5]));
    let index = client.get(format!("{}/", server.url)).send().await.unwrap();
    assert!(index.status().is_success());

    // a second server on the same port fails with a clear message
    let out = bin()
        .args(["serve", "--port", &port.to_string(), "--data-dir"])
        .arg(data.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already in use"));
}
