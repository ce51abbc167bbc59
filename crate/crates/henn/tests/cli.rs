use std::path::Path;
use std::process::{Command, Output};

use henn::io;
use henn_core::engine;
use henn_core::model::{self, builtin, LayerSpec, ModelSpec, Shape, BUILTIN_NAMES};
use serde_json::Value;

fn henn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_henn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_reports_footprint_and_capacity() {
    let v = json(&henn(&["plan", "--builtin", "M1", "--align", "800"]));
    assert_eq!(v["footprint"], 800);
    assert_eq!(v["capacity"], 10);
    assert_eq!(v["offsets"].as_array().unwrap().len(), 10);
    assert_eq!(v["mult_depth"], 7);

    let v = json(&henn(&["plan", "--builtin", "M1"]));
    assert_eq!(v["footprint"], 784);
    let sizes: Vec<u64> = v["per_layer_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["slots"].as_u64().unwrap())
        .collect();
    assert!(sizes.contains(&704) && sizes.contains(&648));
}

#[test]
fn plan_fails_when_depth_is_too_small() {
    let out = henn(&["plan", "--builtin", "M1", "--depth", "6"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth budget exceeded"));
}

#[test]
fn plan_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plan.json");
    let out = henn(&["plan", "--builtin", "M6", "--report", path(&file)]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(v["footprint"], 320);
}

#[test]
fn run_names_rows_after_layers() {
    let v = json(&henn(&["run", "--builtin", "M2"]));
    let names: Vec<&str> = v["per_layer"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["layer"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["Drop Level", "Conv2d", "Square", "AvgPool2d", "Conv2d", "Square", "AvgPool2d", "Flatten", "FC1"]
    );
    for key in ["rotations", "pt_mults", "ct_mults", "adds", "level_after", "est_cost"] {
        assert!(v["per_layer"][0].get(key).is_some(), "{key}");
    }
    assert_eq!(v["outputs"].as_array().unwrap().len(), 1);
    assert_eq!(v["outputs"][0].as_array().unwrap().len(), 10);
    assert!(v.get("totals").is_some() && v.get("params").is_some() && v.get("plan").is_some());
}

#[test]
fn run_batches_ten_samples() {
    let v = json(&henn(&["run", "--builtin", "M1", "--align", "800", "--batch", "10"]));
    assert_eq!(v["outputs"].as_array().unwrap().len(), 10);
    assert_eq!(v["batches"], 1);
    let over = henn(&["run", "--builtin", "M1", "--align", "800", "--batch", "11"]);
    assert_eq!(over.status.code(), Some(3));
}

#[test]
fn run_reads_json_and_csv_samples() {
    let dir = tempfile::tempdir().unwrap();
    let m = builtin("M7", 0).unwrap();
    let samples = engine::random_inputs(&m, 5, 42);
    let json_file = dir.path().join("x.json");
    io::save_samples(&json_file, &samples).unwrap();
    let csv_file = dir.path().join("x.csv");
    let lines: Vec<String> = samples
        .iter()
        .map(|t| t.data.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
        .collect();
    std::fs::write(&csv_file, lines.join("\n")).unwrap();

    for file in [&json_file, &csv_file] {
        let v = json(&henn(&["run", "--builtin", "M7", "--input", path(file), "--batch", "2"]));
        let outs = v["outputs"].as_array().unwrap();
        assert_eq!(outs.len(), 5);
        assert_eq!(v["batches"], 3);
        for (out, sample) in outs.iter().zip(&samples) {
            let want = model::reference_infer(&m, sample).unwrap();
            for (a, b) in out.as_array().unwrap().iter().zip(&want) {
                assert!((a.as_f64().unwrap() - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn csv_needs_single_channel_models() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.csv");
    std::fs::write(&file, "1,2,3\n").unwrap();
    let out = henn(&["run", "--builtin", "M5", "--input", path(&file)]);
    assert_eq!(out.status.code(), Some(4));
    let out = henn(&["run", "--builtin", "M1", "--input", path(&file)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("784"));
}

#[test]
fn missing_files_fail() {
    let out = henn(&["run", "--model", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(4));
    let out = henn(&["run", "--builtin", "M1", "--input", "/nonexistent/x.json"]);
    assert_eq!(out.status.code(), Some(4));
    let out = henn(&["run", "--builtin", "M1", "--params", "/nonexistent/p.json"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(henn(&["run"]).status.code(), Some(2));
    assert_eq!(henn(&["run", "--builtin", "M1", "--model", "m.json"]).status.code(), Some(2));
    assert_eq!(henn(&["verify", "--builtin", "M1", "--tol", "0"]).status.code(), Some(2));
    assert_eq!(henn(&["run", "--builtin", "M1", "--batch", "0"]).status.code(), Some(2));
    assert_eq!(henn(&["run", "--builtin", "M9"]).status.code(), Some(3));
}

#[test]
fn params_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.json");
    std::fs::write(
        &file,
        r#"{"poly_degree": 16384, "depth": 9, "scale_bits": 30, "quantize": false, "log_q": 432}"#,
    )
    .unwrap();
    let v = json(&henn(&["run", "--builtin", "M1", "--params", path(&file)]));
    assert_eq!(v["params"]["depth"], 9);
    assert_eq!(v["per_layer"][0]["pt_mults"], 2);
    let v = json(&henn(&["run", "--builtin", "M1", "--params", path(&file), "--depth", "7", "--quantize"]));
    assert_eq!(v["params"]["depth"], 7);
    assert_eq!(v["params"]["quantize"], true);
    std::fs::write(&file, r#"{"poly_degree": 1000}"#).unwrap();
    assert_eq!(henn(&["plan", "--builtin", "M1", "--params", path(&file)]).status.code(), Some(3));
}

#[test]
fn verify_passes_for_every_builtin() {
    for name in BUILTIN_NAMES {
        let out = henn(&["verify", "--builtin", name, "--trials", "2", "--tol", "1e-6"]);
        let v = json(&out);
        assert_eq!(v["passed"], true, "{name}");
        assert_eq!(v["argmax_agreement"], 1.0);
    }
}

#[test]
fn verify_scale_sweep_is_monotone() {
    let v = json(&henn(&["verify", "--builtin", "M1", "--scale-sweep", "--trials", "3"]));
    assert_eq!(v["monotone"], true);
    let errs: Vec<f64> = v["sweep"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["mean_abs_err"].as_f64().unwrap())
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn verify_fails_on_quantization_beyond_tolerance() {
    let out = henn(&["verify", "--builtin", "M1", "--quantize", "--scale-bits", "8", "--trials", "2", "--tol", "1e-9"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], false);
}

#[test]
fn corrupted_model_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    let m = builtin("M1", 0).unwrap();
    let good = dir.path().join("m1.json");
    io::save_model(&good, &m).unwrap();
    let v = json(&henn(&["verify", "--model", path(&good), "--trials", "1"]));
    assert_eq!(v["passed"], true);

    let mut short = m.clone();
    if let LayerSpec::Fc(f) = &mut short.layers[3] {
        f.weights.truncate(100);
    }
    let truncated = dir.path().join("short.json");
    io::save_model(&truncated, &short).unwrap();
    let out = henn(&["verify", "--model", path(&truncated)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weight or bias length"));

    let text = std::fs::read_to_string(&good).unwrap();
    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, &text[..text.len() / 2]).unwrap();
    assert_eq!(henn(&["verify", "--model", path(&garbled)]).status.code(), Some(4));
}

#[test]
fn bench_reports_counts_and_depth_sweep() {
    let text = stdout(&henn(&["bench", "--builtin", "M2"]));
    let mut blocks = text.split("\n\n");
    let layers = blocks.next().unwrap();
    let conv2 = layers.lines().filter(|l| l.starts_with("Conv2d")).nth(1).unwrap();
    let cols: Vec<&str> = conv2.split(',').collect();
    assert_eq!(cols[1], "100");
    assert_eq!(cols[2], "1200");

    let sweep = blocks.next().unwrap();
    let costs: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(costs.len(), 5);
    assert!(costs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn bench_of_empty_model_has_no_rows() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.json");
    let m = ModelSpec {
        name: "empty".into(),
        input: Shape::new(1, 4, 4),
        layers: Vec::new(),
    };
    io::save_model(&file, &m).unwrap();
    let text = stdout(&henn(&["bench", "--model", path(&file)]));
    assert_eq!(text.trim().lines().count(), 1);

    let v = json(&henn(&["bench", "--model", path(&file), "--format", "json"]));
    assert!(v["per_layer"].as_array().unwrap().is_empty());
}

#[test]
fn run_is_deterministic() {
    let a = stdout(&henn(&["run", "--builtin", "M3", "--seed", "5", "--batch", "3"]));
    let b = stdout(&henn(&["run", "--builtin", "M3", "--seed", "5", "--batch", "3"]));
    assert_eq!(a, b);
    let c = stdout(&henn(&["run", "--builtin", "M3", "--seed", "6", "--batch", "3"]));
    assert_ne!(a, c);
}
