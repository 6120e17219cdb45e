use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use fock_tomo::io::{read_multi_trace_csv, read_quadratures, read_trace_csv, read_triggers, write_quadratures, MULTI_TRACE_HEADER};
use fock_tomo::synth::make_instance;
use fock_tomo::{
    build_histogram, fit_eta, g2_from_weights, infer, invert_loss, make_dataset, mle_em, train, wigner_grid,
    wigner_origin, Dataset, HistogramConfig, Inference, LinearModel, MleConfig, MleResult, ModeFunction,
    PhotonWeights, QuadratureBatch, TimeTrace, TrainConfig, UniformAxis,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::manifest::{manifest_path, sibling, RunManifest};
use crate::{
    BinningArgs, Cli, CliError, CliResult, Command, CompareArgs, FitEtaArgs, InferArgs, MleArgs, SynthArgs,
    TraceExtractArgs, TrainArgs, WignerArgs,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Runs one command; reports without `--out` are written to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a, stdout),
        Command::Mle(a) => mle_cmd(a, stdout),
        Command::Compare(a) => compare(a),
        Command::Wigner(a) => wigner(a),
        Command::TraceExtract(a) => trace_extract(a),
        Command::FitEta(a) => fit_eta_cmd(a, stdout),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("cannot read {}", path.display()),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        context: format!("cannot write {}", path.display()),
        source,
    })
}

fn write_manifest(out: &Path, manifest: &mut RunManifest) -> CliResult<()> {
    manifest.output(out);
    let text = serde_json::to_string_pretty(manifest).map_err(fock_tomo::Error::from)?;
    write_bytes(&manifest_path(out), format!("{text}\n").as_bytes())
}

fn emit_report(report: &impl Serialize, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    let text = serde_json::to_string_pretty(report).map_err(fock_tomo::Error::from)? + "\n";
    match out {
        Some(path) => write_bytes(path, text.as_bytes()),
        None => stdout.write_all(text.as_bytes()).map_err(|source| CliError::Io {
            context: "cannot write to stdout".into(),
            source,
        }),
    }
}

fn load_quadratures(path: &Path) -> CliResult<QuadratureBatch> {
    let file = fs::File::open(path).map_err(|source| CliError::Io {
        context: format!("cannot read {}", path.display()),
        source,
    })?;
    let batch = read_quadratures(BufReader::new(file))?;
    if batch.is_empty() {
        return Err(CliError::Usage(format!("{} holds no samples", path.display())));
    }
    Ok(batch)
}

fn load_model(path: &Path) -> CliResult<LinearModel> {
    Ok(LinearModel::from_json(&read_text(path)?)?)
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(Dataset::from_json(&read_text(path)?)?)
}

fn histogram_config(b: &BinningArgs) -> CliResult<HistogramConfig> {
    Ok(HistogramConfig::new(b.range_min, b.range_max, b.bins)?)
}

/// `g2` as a number, or the string `"undefined"` for the vacuum.
pub fn g2_value(g2: Option<f64>) -> Value {
    match g2 {
        Some(v) => Value::from(v),
        None => Value::from("undefined"),
    }
}

fn g2_text(g2: Option<f64>) -> String {
    g2.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn synth(a: SynthArgs) -> CliResult<()> {
    if a.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let config = histogram_config(&a.binning)?;
    let dataset = make_dataset(a.instances, a.samples, config, a.seed)?;
    write_bytes(&a.out, (dataset.to_json()? + "\n").as_bytes())?;

    let mut manifest = RunManifest::new("synth", Some(a.seed));
    manifest
        .param("instances", a.instances)
        .param("samples", a.samples)
        .param("bins", a.binning.bins)
        .param("range_min", a.binning.range_min)
        .param("range_max", a.binning.range_max);
    if let Some(dir) = &a.emit_quadratures {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            context: format!("cannot create {}", dir.display()),
            source,
        })?;
        (0..a.instances as u64).into_par_iter().try_for_each(|k| -> CliResult<()> {
            let (_, batch) = make_instance(a.samples, config, a.seed, k)?;
            let mut buf = Vec::with_capacity(a.samples * 20);
            write_quadratures(&batch, &mut buf)?;
            write_bytes(&quadrature_file(dir, k, a.instances), &buf)
        })?;
        manifest.param("emit_quadratures", dir.display());
    }
    write_manifest(&a.out, &mut manifest)
}

/// `instance_<k>.txt`, zero-padded to the width of the largest index.
pub fn quadrature_file(dir: &Path, k: u64, instances: usize) -> PathBuf {
    let width = (instances.max(2) - 1).to_string().len();
    dir.join(format!("instance_{k:0width$}.txt"))
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let train_set = load_dataset(&a.train)?;
    let test_set = load_dataset(&a.test)?;
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (model, history) = train(&train_set, &test_set, &config)?;
    write_bytes(&a.out, (model.to_json()? + "\n").as_bytes())?;

    let loss_path = a.loss_out.clone().unwrap_or_else(|| sibling(&a.out, "loss.csv"));
    let mut csv = String::from("epoch,train_mse,test_mse\n");
    for e in &history {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, e.test_mse));
    }
    write_bytes(&loss_path, csv.as_bytes())?;

    let mut manifest = RunManifest::new("train", Some(a.seed));
    manifest
        .param("train", a.train.display())
        .param("test", a.test.display())
        .param("lr", a.lr)
        .param("epochs", a.epochs)
        .param("batch", a.batch)
        .param("adam_beta1", config.adam_beta1)
        .param("adam_beta2", config.adam_beta2)
        .param("adam_epsilon", config.adam_epsilon)
        .output(&loss_path);
    write_manifest(&a.out, &mut manifest)
}

#[derive(Debug, Serialize)]
struct Timings {
    histogram_ms: f64,
    predict_ms: f64,
    derive_ms: f64,
    total_ms: f64,
}

#[derive(Debug, Serialize)]
struct LossCorrected {
    efficiency: f64,
    weights: Vec<f64>,
    w00: f64,
    g2: Value,
    clamped: bool,
}

#[derive(Debug, Serialize)]
struct InferReport {
    schema_version: u32,
    kind: &'static str,
    weights: Vec<f64>,
    w00: f64,
    g2: Value,
    degenerate: bool,
    total_count: u64,
    dropped_count: u64,
    timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_corrected: Option<LossCorrected>,
}

fn check_binning(model: &LinearModel, a: &InferArgs) -> CliResult<()> {
    let c = model.histogram_config;
    let mismatch = a.bins.is_some_and(|b| b != c.num_bins)
        || a.range_min.is_some_and(|v| v != c.x_min)
        || a.range_max.is_some_and(|v| v != c.x_max);
    if mismatch {
        return Err(fock_tomo::Error::ConfigMismatch(format!(
            "model was trained on {} bins over [{}, {}]",
            c.num_bins, c.x_min, c.x_max
        ))
        .into());
    }
    Ok(())
}

fn infer_cmd(a: InferArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let model = load_model(&a.model)?;
    check_binning(&model, &a)?;
    let batch = load_quadratures(&a.quadratures)?;
    let inf: Inference = infer(&model, &batch)?;
    let loss_corrected = match a.efficiency {
        Some(eta) => {
            let corr = invert_loss(&inf.weights, eta)?;
            Some(LossCorrected {
                efficiency: eta,
                weights: corr.weights.as_slice().to_vec(),
                w00: wigner_origin(&corr.weights),
                g2: g2_value(g2_from_weights(&corr.weights)),
                clamped: corr.clamped,
            })
        }
        None => None,
    };
    let report = InferReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "infer",
        weights: inf.weights.as_slice().to_vec(),
        w00: inf.w00,
        g2: g2_value(inf.g2),
        degenerate: inf.degenerate,
        total_count: inf.total_count,
        dropped_count: inf.dropped_count,
        timings: Timings {
            histogram_ms: millis(inf.timings.histogram),
            predict_ms: millis(inf.timings.predict),
            derive_ms: millis(inf.timings.derive),
            total_ms: millis(inf.timings.total()),
        },
        loss_corrected,
    };
    emit_report(&report, a.out.as_deref(), stdout)?;
    if let Some(out) = &a.out {
        let mut manifest = RunManifest::new("infer", None);
        manifest
            .param("model", a.model.display())
            .param("quadratures", a.quadratures.display());
        if let Some(eta) = a.efficiency {
            manifest.param("efficiency", eta);
        }
        write_manifest(out, &mut manifest)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MleReport {
    schema_version: u32,
    kind: &'static str,
    weights: Vec<f64>,
    w00: f64,
    g2: Value,
    iterations: usize,
    converged: bool,
    sample_count: usize,
    final_loglik: f64,
    loglik_history: Vec<f64>,
}

fn mle_report(res: &MleResult, sample_count: usize) -> MleReport {
    MleReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "mle",
        weights: res.weights.as_slice().to_vec(),
        w00: wigner_origin(&res.weights),
        g2: g2_value(g2_from_weights(&res.weights)),
        iterations: res.iterations,
        converged: res.converged,
        sample_count,
        final_loglik: res.final_loglik(),
        loglik_history: res.loglik_history.clone(),
    }
}

fn mle_cmd(a: MleArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let batch = load_quadratures(&a.quadratures)?;
    let config = MleConfig {
        max_iterations: a.max_iter,
        tolerance: a.tol,
        n_max: a.nmax,
    };
    let res = mle_em(&batch, &config)?;
    emit_report(&mle_report(&res, batch.len()), a.out.as_deref(), stdout)?;
    if let Some(out) = &a.out {
        let mut manifest = RunManifest::new("mle", None);
        manifest
            .param("quadratures", a.quadratures.display())
            .param("nmax", a.nmax)
            .param("max_iter", a.max_iter)
            .param("tol", a.tol);
        write_manifest(out, &mut manifest)?;
    }
    Ok(())
}

/// Splits `LABEL=PATH` at the last `=`.
pub fn parse_labelled(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.rsplit_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(CliError::Usage(format!("expected LABEL=PATH, got `{spec}`"))),
    }
}

pub const COMPARE_HEADER: &str = "label,w0_nn,w1_nn,w2_nn,w0_mle,w1_mle,w2_mle,w00_nn,w00_mle,g2_nn,g2_mle";

fn compare(a: CompareArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let inputs = a.inputs.iter().map(|s| parse_labelled(s)).collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<CliResult<(Inference, MleResult, usize)>> = inputs
        .par_iter()
        .map(|(label, path)| {
            let run = || -> CliResult<_> {
                let batch = load_quadratures(path)?;
                let nn = infer(&model, &batch)?;
                let ml = mle_em(&batch, &MleConfig::default())?;
                Ok((nn, ml, batch.len()))
            };
            run().map_err(|e| e.context(&format!("input `{label}`")))
        })
        .collect();

    let mut csv = format!("{COMPARE_HEADER}\n");
    let mut manifest = RunManifest::new("compare", None);
    manifest.param("model", a.model.display());
    for ((label, path), row) in inputs.iter().zip(rows) {
        let (nn, ml, count) = row?;
        let w = nn.weights.as_slice();
        let v = ml.weights.as_slice();
        csv.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{},{},{}\n",
            w[0],
            w[1],
            w[2],
            v[0],
            v[1],
            v[2],
            nn.w00,
            wigner_origin(&ml.weights),
            g2_text(nn.g2),
            g2_text(g2_from_weights(&ml.weights)),
        ));
        manifest.param(&format!("input.{label}"), path.display());
        manifest.param(&format!("samples.{label}"), count);
    }
    write_bytes(&a.out, csv.as_bytes())?;
    write_manifest(&a.out, &mut manifest)
}

/// Parses `w0,w1,w2` into validated photon weights.
pub fn parse_weights(text: &str) -> CliResult<PhotonWeights> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("`{s}` in --weights is not a number")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(PhotonWeights::new(values)?)
}

fn report_weights(path: &Path) -> CliResult<PhotonWeights> {
    let doc: Value = serde_json::from_str(&read_text(path)?).map_err(fock_tomo::Error::from)?;
    let w = doc
        .get("weights")
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("{} has no `weights` field", path.display())))?;
    let w: Vec<f64> = serde_json::from_value(w).map_err(fock_tomo::Error::from)?;
    Ok(PhotonWeights::new(w)?)
}

/// Keeps the square grid, and the CSV written from it, to a few million rows.
const MAX_WIGNER_HALF_POINTS: f64 = 1000.0;

fn wigner(a: WignerArgs) -> CliResult<()> {
    let weights = match (&a.weights, &a.from_report) {
        (Some(text), _) => parse_weights(text)?,
        (None, Some(path)) => report_weights(path)?,
        (None, None) => return Err(CliError::Usage("one of --weights or --from-report is required".into())),
    };
    if a.step > 0.0 && a.range / a.step > MAX_WIGNER_HALF_POINTS {
        return Err(CliError::Usage(format!(
            "--range {} with --step {} exceeds {MAX_WIGNER_HALF_POINTS} points per half axis",
            a.range, a.step
        )));
    }
    let axis = UniformAxis::symmetric(a.range, a.step)?;
    let grid = wigner_grid(&weights, axis, axis)?;
    let xs = grid.x_axis.values();
    let ps = grid.p_axis.values();
    let mut csv = String::with_capacity(xs.len() * ps.len() * 32 + 8);
    csv.push_str("x,p,w\n");
    for (i, x) in xs.iter().enumerate() {
        for (j, p) in ps.iter().enumerate() {
            csv.push_str(&format!("{x},{p},{}\n", grid.get(i, j)));
        }
    }
    write_bytes(&a.out, csv.as_bytes())?;

    let mut manifest = RunManifest::new("wigner", None);
    let ws: Vec<String> = weights.as_slice().iter().map(f64::to_string).collect();
    manifest
        .param("weights", ws.join(","))
        .param("range", a.range)
        .param("step", a.step);
    if let Some(path) = &a.from_report {
        manifest.param("from_report", path.display());
    }
    write_manifest(&a.out, &mut manifest)
}

fn load_traces(paths: &[PathBuf]) -> CliResult<HashMap<String, TimeTrace>> {
    let mut traces = HashMap::new();
    for path in paths {
        let text = read_text(path)?;
        let first = text.lines().next().unwrap_or("").trim();
        let found: Vec<(String, TimeTrace)> = if first == MULTI_TRACE_HEADER {
            read_multi_trace_csv(text.as_bytes())?
        } else {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            vec![(id, read_trace_csv(text.as_bytes())?)]
        };
        for (id, trace) in found {
            if traces.insert(id.clone(), trace).is_some() {
                return Err(CliError::Usage(format!("trace id `{id}` appears more than once")));
            }
        }
    }
    Ok(traces)
}

fn trace_extract(a: TraceExtractArgs) -> CliResult<()> {
    let traces = load_traces(&a.traces)?;
    let triggers: Vec<(String, f64)> = read_triggers(read_text(&a.triggers)?.as_bytes())?;
    let mut mode = ModeFunction::new(a.gamma, 0.0)?;
    if let Some(rise) = a.gamma_rise {
        mode = mode.with_rise(rise)?;
    }

    let mut manifest = RunManifest::new("trace-extract", None);
    let mut values = Vec::with_capacity(triggers.len());
    for (id, t_c) in &triggers {
        let Some(trace) = traces.get(id) else {
            manifest.warn(format!("trigger {t_c} refers to unknown trace `{id}`"));
            continue;
        };
        match fock_tomo::extract_quadrature(trace, &mode.at_trigger(*t_c)) {
            Ok(x) => values.push(x),
            Err(e) => manifest.warn(format!("trace `{id}`: {e}")),
        }
    }
    let extracted = values.len();
    let mut buf = Vec::with_capacity(extracted * 20);
    write_quadratures(&QuadratureBatch::new(values)?, &mut buf)?;
    write_bytes(&a.out, &buf)?;

    let paths: Vec<String> = a.traces.iter().map(|p| p.display().to_string()).collect();
    manifest
        .param("traces", paths.join(";"))
        .param("triggers", a.triggers.display())
        .param("gamma", a.gamma)
        .param("gamma_rise", a.gamma_rise.unwrap_or(a.gamma))
        .param("extracted", extracted);
    write_manifest(&a.out, &mut manifest)
}

#[derive(Debug, Serialize)]
struct EtaReport {
    schema_version: u32,
    kind: &'static str,
    eta: f64,
    residual: f64,
    bins: usize,
    range_min: f64,
    range_max: f64,
    total_count: u64,
    dropped_count: u64,
}

fn fit_eta_cmd(a: FitEtaArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let batch = load_quadratures(&a.quadratures)?;
    let config = histogram_config(&a.binning)?;
    let hist = build_histogram(&batch, config)?;
    let fit = fit_eta(&hist)?;
    let report = EtaReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "fit-eta",
        eta: fit.eta,
        residual: fit.residual,
        bins: config.num_bins,
        range_min: config.x_min,
        range_max: config.x_max,
        total_count: hist.total_count(),
        dropped_count: hist.dropped_count(),
    };
    emit_report(&report, a.out.as_deref(), stdout)?;
    if let Some(out) = &a.out {
        let mut manifest = RunManifest::new("fit-eta", None);
        manifest
            .param("quadratures", a.quadratures.display())
            .param("bins", config.num_bins)
            .param("range_min", config.x_min)
            .param("range_max", config.x_max);
        write_manifest(out, &mut manifest)?;
    }
    Ok(())
}
