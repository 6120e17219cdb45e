use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use fock_tomo::io::{write_quadratures, write_trace_rows, write_triggers, MULTI_TRACE_HEADER};
use fock_tomo::{child_rng, sample_quadratures, simulate_trace, ModeFunction, PhotonWeights, QuadratureBatch};
use serde_json::Value;
use tempfile::TempDir;

const FIG6: [f64; 3] = [0.363 / 0.996, 0.606 / 0.996, 0.027 / 0.996];

fn fock_tomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fock-tomo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = fock_tomo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    fock_tomo(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_batch(path: &Path, w: [f64; 3], count: usize, seed: u64) {
    let w = PhotonWeights::from_array(w).unwrap();
    let batch = sample_quadratures(&w, count, &mut child_rng(seed, 0)).unwrap();
    write_quadratures(&batch, fs::File::create(path).unwrap()).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn weights_of(report: &Value) -> Vec<f64> {
    serde_json::from_value(report["weights"].clone()).unwrap()
}

/// A model trained once through the CLI and shared by the tests that need one.
fn model() -> &'static Path {
    static MODEL: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = MODEL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let train = dir.path().join("train.ds");
        let test = dir.path().join("test.ds");
        let model = dir.path().join("model.json");
        ok(&["synth", "--instances", "3000", "--samples", "8000", "--seed", "1", "--out", s(&train)]);
        ok(&["synth", "--instances", "300", "--samples", "8000", "--seed", "2", "--out", s(&test)]);
        ok(&["train", "--train", s(&train), "--test", s(&test), "--out", s(&model)]);
        (dir, model)
    });
    path
}

#[test]
fn synth_is_deterministic_and_documented() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.ds");
    let b = dir.path().join("b.ds");
    for out in [&a, &b] {
        ok(&["synth", "--instances", "25", "--samples", "500", "--seed", "7", "--bins", "40", "--out", s(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let doc = json(&a);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["instances"].as_array().unwrap().len(), 25);
    assert_eq!(doc["histogram_config"]["num_bins"], 40);

    let manifest = json(&dir.path().join("a.ds.manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["parameters"]["instances"], "25");
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["timestamp"].as_str().unwrap().ends_with('Z'));
}

#[test]
fn synth_emits_instance_quadratures() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.ds");
    let q = dir.path().join("q");
    ok(&["synth", "--instances", "12", "--samples", "300", "--out", s(&out), "--emit-quadratures", s(&q)]);
    let mut names: Vec<String> = fs::read_dir(&q)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    assert_eq!(names[0], "instance_00.txt");
    let first = fs::read_to_string(q.join("instance_00.txt")).unwrap();
    assert_eq!(first.lines().count(), 300);
}

#[test]
fn synth_rejects_bad_flags() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.ds");
    assert_eq!(code(&["synth", "--instances", "0", "--samples", "10", "--out", s(&out)]), 2);
    assert_eq!(code(&["synth", "--instances", "3", "--samples", "10", "--bins", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["synth", "--instances", "3", "--samples", "ten", "--out", s(&out)]), 2);
    let missing = dir.path().join("no/such/dir/x.ds");
    assert_eq!(code(&["synth", "--instances", "3", "--samples", "10", "--out", s(&missing)]), 2);
}

#[test]
fn train_writes_loss_history_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--instances", "200", "--samples", "2000", "--seed", "3", "--out", s(&p("tr.ds"))]);
    ok(&["synth", "--instances", "50", "--samples", "2000", "--seed", "4", "--out", s(&p("te.ds"))]);
    for name in ["m1.json", "m2.json"] {
        ok(&["train", "--train", s(&p("tr.ds")), "--test", s(&p("te.ds")), "--epochs", "4", "--batch", "16", "--out", s(&p(name))]);
    }
    assert_eq!(fs::read(p("m1.json")).unwrap(), fs::read(p("m2.json")).unwrap());

    let csv = fs::read_to_string(p("m1.json.loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_mse,test_mse");
    assert_eq!(lines.len(), 5);
    let last: Vec<f64> = lines[4].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 4.0);

    let model = json(&p("m1.json"));
    assert_eq!(model["schema_version"], 1);
    assert_eq!(model["weights"].as_array().unwrap().len(), 150);
    assert_eq!(model["training_meta"]["final_test_mse"].as_f64().unwrap(), last[2]);
    let manifest = json(&p("m1.json.manifest.json"));
    assert_eq!(manifest["parameters"]["batch"], "16");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn train_rejects_mismatched_binning() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--instances", "10", "--samples", "100", "--out", s(&p("a.ds"))]);
    ok(&["synth", "--instances", "10", "--samples", "100", "--bins", "40", "--out", s(&p("b.ds"))]);
    assert_eq!(code(&["train", "--train", s(&p("a.ds")), "--test", s(&p("b.ds")), "--out", s(&p("m.json"))]), 3);
    assert_eq!(code(&["train", "--train", s(&p("a.ds")), "--test", s(&p("nope.ds")), "--out", s(&p("m.json"))]), 2);
}

#[test]
fn infer_recovers_fig6_weights() {
    let dir = TempDir::new().unwrap();
    let q = dir.path().join("fig6.txt");
    let out = dir.path().join("report.json");
    write_batch(&q, FIG6, 8000, 60);
    ok(&["infer", "--model", s(model()), "--quadratures", s(&q), "--out", s(&out)]);
    let report = json(&out);
    assert_eq!(report["schema_version"], 1);
    for (a, b) in weights_of(&report).iter().zip([0.363, 0.606, 0.027]) {
        assert!((a - b).abs() < 0.03, "{report}");
    }
    assert!(report["w00"].as_f64().unwrap() < 0.0);
    assert!(report["g2"].as_f64().unwrap() < 0.5);
    assert_eq!(report["total_count"], 8000);
    let t = &report["timings"];
    for key in ["histogram_ms", "predict_ms", "derive_ms"] {
        assert!(t[key].as_f64().unwrap() >= 0.0);
    }
    assert!(t["total_ms"].as_f64().unwrap() <= 100.0);
    assert!(report.get("loss_corrected").is_none());
    assert_eq!(json(&dir.path().join("report.json.manifest.json"))["command"], "infer");
}

#[test]
fn infer_vacuum_report_prints_undefined() {
    // A trained model never lands exactly on the vacuum, so use one that always does.
    let dir = TempDir::new().unwrap();
    let mut model: Value = json(model());
    model["weights"] = Value::from(vec![0.0; 150]);
    model["bias"] = Value::from(vec![1.0, 0.0, 0.0]);
    let path = dir.path().join("vac_model.json");
    fs::write(&path, model.to_string()).unwrap();
    let q = dir.path().join("vac.txt");
    write_batch(&q, [1.0, 0.0, 0.0], 100, 62);
    let out = ok(&["infer", "--model", s(&path), "--quadratures", s(&q)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["g2"], "undefined");
    assert_eq!(weights_of(&report), vec![1.0, 0.0, 0.0]);
}

#[test]
fn infer_loss_correction_and_errors() {
    let dir = TempDir::new().unwrap();
    let q = dir.path().join("single.txt");
    write_batch(&q, [0.08, 0.92, 0.0], 8000, 63);
    let out = ok(&["infer", "--model", s(model()), "--quadratures", s(&q), "--efficiency", "0.92"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let corrected = &report["loss_corrected"];
    assert_eq!(corrected["efficiency"], 0.92);
    let w: Vec<f64> = serde_json::from_value(corrected["weights"].clone()).unwrap();
    assert!(w[1] > 0.95, "{report}");

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "# nothing\n").unwrap();
    assert_eq!(code(&["infer", "--model", s(model()), "--quadratures", s(&empty)]), 2);
    assert_eq!(code(&["infer", "--model", s(model()), "--quadratures", s(&q), "--bins", "40"]), 3);
    assert_eq!(code(&["infer", "--model", s(model()), "--quadratures", s(&q), "--range-min", "-4"]), 3);
    assert_eq!(code(&["infer", "--model", s(model()), "--quadratures", s(&q), "--efficiency", "0"]), 2);
}

#[test]
fn mle_recovers_fig6_weights() {
    let dir = TempDir::new().unwrap();
    let q = dir.path().join("fig6.txt");
    let out = dir.path().join("mle.json");
    write_batch(&q, FIG6, 8000, 64);
    ok(&["mle", "--quadratures", s(&q), "--out", s(&out)]);
    let report = json(&out);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["converged"], true);
    for (a, b) in weights_of(&report).iter().zip([0.363, 0.606, 0.027]) {
        assert!((a - b).abs() < 0.03, "{report}");
    }
    let history = report["loglik_history"].as_array().unwrap();
    assert_eq!(history.len(), report["iterations"].as_u64().unwrap() as usize + 1);

    let out3 = ok(&["mle", "--quadratures", s(&q), "--nmax", "3"]);
    let r3: Value = serde_json::from_slice(&out3.stdout).unwrap();
    assert_eq!(weights_of(&r3).len(), 4);
    assert_eq!(code(&["mle", "--quadratures", s(&q), "--nmax", "5"]), 2);
    assert_eq!(code(&["mle", "--quadratures", s(&q), "--tol", "0"]), 2);
}

#[test]
fn compare_sweep_crosses_zero_at_half() {
    let dir = TempDir::new().unwrap();
    let sweep = [0.3, 0.4, 0.45, 0.55, 0.6, 0.7];
    let mut inputs = Vec::new();
    for (i, &w1) in sweep.iter().enumerate() {
        let path = dir.path().join(format!("w{i}.txt"));
        write_batch(&path, [1.0 - w1, w1, 0.0], 8000, 70 + i as u64);
        inputs.push(format!("{w1}={}", path.display()));
    }
    let out = dir.path().join("cmp.csv");
    let mut args = vec!["compare", "--model", s(model()), "--out", s(&out)];
    args.extend(inputs.iter().map(String::as_str));
    ok(&args);

    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "label,w0_nn,w1_nn,w2_nn,w0_mle,w1_mle,w2_mle,w00_nn,w00_mle,g2_nn,g2_mle"
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), sweep.len());
    for (row, w1) in rows.iter().zip(sweep) {
        assert_eq!(row[0], w1.to_string());
        let v: Vec<f64> = row[1..9].iter().map(|x| x.parse().unwrap()).collect();
        for n in 0..3 {
            assert!((v[n] - v[n + 3]).abs() <= 0.02, "{row:?}");
        }
        for w00 in [v[6], v[7]] {
            assert_eq!(w00 < 0.0, w1 > 0.5, "{row:?}");
        }
    }
    let manifest = json(&dir.path().join("cmp.csv.manifest.json"));
    assert_eq!(manifest["parameters"]["samples.0.3"], "8000");
}

#[test]
fn compare_errors_name_the_label() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.txt");
    write_batch(&good, FIG6, 500, 80);
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "0.1\nnot-a-number\n").unwrap();
    let out = dir.path().join("cmp.csv");
    let args = [
        "compare",
        "--model",
        s(model()),
        "--out",
        s(&out),
        &format!("ok={}", good.display()),
        &format!("pump-3mW={}", bad.display()),
    ]
    .map(String::from);
    let res = fock_tomo(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("pump-3mW"));
    assert!(!out.exists());

    assert_eq!(code(&["compare", "--model", s(model()), "--out", s(&out)]), 2);
    assert_eq!(code(&["compare", "--model", s(model()), "--out", s(&out), "no-equals-sign"]), 2);
}

fn read_grid(path: &Path) -> Vec<(f64, f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,p,w"));
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn wigner_grids() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("single.csv");
    ok(&["wigner", "--weights", "0,1,0", "--range", "3", "--step", "0.1", "--out", s(&out)]);
    let grid = read_grid(&out);
    assert_eq!(grid.len(), 61 * 61);
    let min = grid.iter().copied().fold((0.0, 0.0, f64::INFINITY), |a, b| if b.2 < a.2 { b } else { a });
    assert_eq!((min.0, min.1), (0.0, 0.0));
    assert!((min.2 + std::f64::consts::FRAC_1_PI).abs() < 1e-12);

    let vac = dir.path().join("vac.csv");
    ok(&["wigner", "--weights", "1,0,0", "--out", s(&vac)]);
    assert!(read_grid(&vac).iter().all(|g| g.2 > 0.0));

    let fig6 = dir.path().join("fig6.csv");
    let w = FIG6.map(|v| v.to_string()).join(",");
    ok(&["wigner", "--weights", &w, "--range", "1", "--step", "0.5", "--out", s(&fig6)]);
    let origin = read_grid(&fig6).into_iter().find(|g| g.0 == 0.0 && g.1 == 0.0).unwrap();
    assert!((origin.2 - -0.0688).abs() < 1e-3, "{origin:?}");

    assert_eq!(code(&["wigner", "--weights", "0.5,0.6,-0.1", "--out", s(&out)]), 2);
    assert_eq!(code(&["wigner", "--weights", "0.5,0.4", "--out", s(&out)]), 2);
    assert_eq!(code(&["wigner", "--out", s(&out)]), 2);
    assert_eq!(code(&["wigner", "--weights", "1,0,0", "--step", "1e-6", "--out", s(&out)]), 2);
    assert_eq!(code(&["wigner", "--weights", "1,0,0", "--step", "0", "--out", s(&out)]), 2);
}

#[test]
fn wigner_from_report() {
    let dir = TempDir::new().unwrap();
    let q = dir.path().join("q.txt");
    write_batch(&q, FIG6, 4000, 90);
    let report = dir.path().join("mle.json");
    ok(&["mle", "--quadratures", s(&q), "--out", s(&report)]);
    let out = dir.path().join("w.csv");
    ok(&["wigner", "--from-report", s(&report), "--range", "0.2", "--step", "0.1", "--out", s(&out)]);
    let w = weights_of(&json(&report));
    let expected = (w[0] - w[1] + w[2]) / std::f64::consts::PI;
    let origin = read_grid(&out).into_iter().find(|g| g.0 == 0.0 && g.1 == 0.0).unwrap();
    assert!((origin.2 - expected).abs() < 1e-15);
    let manifest = json(&dir.path().join("w.csv.manifest.json"));
    assert_eq!(manifest["parameters"]["from_report"], s(&report));
}

/// Writes one multi-trace CSV with a pulse per trace and returns the trigger list.
fn write_traces(path: &Path, xs: &[f64], mode: &ModeFunction, dt: f64, noise: f64, seed: u64) -> Vec<(String, f64)> {
    let mut out = std::io::BufWriter::new(fs::File::create(path).unwrap());
    use std::io::Write;
    writeln!(out, "{MULTI_TRACE_HEADER}").unwrap();
    let mut rng = child_rng(seed, 0);
    let mut triggers = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        // Stagger the triggers so every trace has its own time base.
        let t_c = 20.0 + k as f64 * 0.5;
        let m = mode.at_trigger(t_c);
        let trace = simulate_trace(x, &m, dt, 10.5 / mode.gamma, noise, &mut rng).unwrap();
        let id = format!("tr{k}");
        write_trace_rows(&id, &trace, &mut out).unwrap();
        triggers.push((id, t_c));
    }
    triggers
}

fn read_values(path: &Path) -> Vec<f64> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn trace_extract_noiseless_roundtrip() {
    let dir = TempDir::new().unwrap();
    let traces = dir.path().join("traces.csv");
    let triggers = dir.path().join("triggers.csv");
    let xs = [-1.7, -0.2, 0.0, 0.45, 2.3];
    let mode = ModeFunction::new(1.0, 0.0).unwrap().with_rise(3.0).unwrap();
    let trig = write_traces(&traces, &xs, &mode, 0.005, 0.0, 1);
    write_triggers(&trig, fs::File::create(&triggers).unwrap()).unwrap();
    let out = dir.path().join("x.txt");
    ok(&[
        "trace-extract", "--traces", s(&traces), "--triggers", s(&triggers), "--gamma", "1", "--gamma-rise", "3",
        "--out", s(&out),
    ]);
    let got = read_values(&out);
    assert_eq!(got.len(), xs.len());
    for (a, b) in got.iter().zip(xs) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    let manifest = json(&dir.path().join("x.txt.manifest.json"));
    assert_eq!(manifest["warning_count"], 0);
}

#[test]
fn trace_extract_skips_invalid_triggers() {
    let dir = TempDir::new().unwrap();
    let traces = dir.path().join("traces.csv");
    let mode = ModeFunction::new(1.0, 0.0).unwrap();
    let mut trig = write_traces(&traces, &[0.5, -0.5, 1.0], &mode, 0.02, 0.0, 2);

    // A single `t,x` trace in its own file, named by its stem.
    let single = dir.path().join("solo.csv");
    let solo = simulate_trace(0.25, &mode.at_trigger(3.0), 0.02, 10.0, 0.0, &mut child_rng(3, 0)).unwrap();
    fock_tomo::io::write_trace_csv(&solo, fs::File::create(&single).unwrap()).unwrap();
    trig.push(("solo".into(), 3.0));

    trig.push(("tr0".into(), 500.0));
    trig.push(("tr1".into(), trig[1].1 + 4.0));
    trig.push(("missing".into(), 1.0));
    let triggers = dir.path().join("triggers.csv");
    write_triggers(&trig, fs::File::create(&triggers).unwrap()).unwrap();

    let out = dir.path().join("x.txt");
    ok(&[
        "trace-extract", "--traces", s(&traces), s(&single), "--triggers", s(&triggers), "--gamma", "1", "--out",
        s(&out),
    ]);
    let got = read_values(&out);
    assert_eq!(got.len(), 4);
    assert!((got[3] - 0.25).abs() < 1e-4);
    let manifest = json(&dir.path().join("x.txt.manifest.json"));
    assert_eq!(manifest["warning_count"], 3);
    assert_eq!(manifest["parameters"]["extracted"], "4");
}

#[test]
fn trace_pipeline_recovers_fig6() {
    let dir = TempDir::new().unwrap();
    let w = PhotonWeights::from_array(FIG6).unwrap();
    let xs: QuadratureBatch = sample_quadratures(&w, 8000, &mut child_rng(100, 0)).unwrap();
    let mode = ModeFunction::new(1.0, 0.0).unwrap();
    let traces = dir.path().join("traces.csv");
    let triggers = dir.path().join("triggers.csv");
    let trig = write_traces(&traces, xs.samples(), &mode, 0.02, 0.01, 101);
    write_triggers(&trig, fs::File::create(&triggers).unwrap()).unwrap();

    let q = dir.path().join("q.txt");
    ok(&["trace-extract", "--traces", s(&traces), "--triggers", s(&triggers), "--gamma", "1", "--out", s(&q)]);
    assert_eq!(read_values(&q).len(), 8000);
    let report = dir.path().join("r.json");
    ok(&["infer", "--model", s(model()), "--quadratures", s(&q), "--out", s(&report)]);
    for (a, b) in weights_of(&json(&report)).iter().zip([0.363, 0.606, 0.027]) {
        assert!((a - b).abs() < 0.04);
    }
}

#[test]
fn fit_eta_reports() {
    let dir = TempDir::new().unwrap();
    let q = dir.path().join("q.txt");
    write_batch(&q, [0.369, 0.631, 0.0], 8000, 110);
    let out = ok(&["fit-eta", "--quadratures", s(&q)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!((report["eta"].as_f64().unwrap() - 0.631).abs() < 0.03, "{report}");
    assert!(report["residual"].as_f64().unwrap() >= 0.0);

    let vac = dir.path().join("vac.txt");
    write_batch(&vac, [1.0, 0.0, 0.0], 8000, 111);
    let path = dir.path().join("eta.json");
    ok(&["fit-eta", "--quadratures", s(&vac), "--bins", "40", "--range-min", "-4", "--range-max", "4", "--out", s(&path)]);
    let report = json(&path);
    assert!(report["eta"].as_f64().unwrap() < 0.03);
    assert_eq!(report["bins"], 40);

    assert_eq!(code(&["fit-eta", "--quadratures", s(&q), "--range-min", "1", "--range-max", "-1"]), 2);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["infer", "--model"]), 2);
}
