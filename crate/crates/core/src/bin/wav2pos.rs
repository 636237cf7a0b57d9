//! Command-line driver for the localization toolkit: dataset
//! simulation, front-end pretraining, model training, evaluation, the
//! classical baseline, and curve plotting. Every subcommand writes a
//! `manifest.txt` into its output directory recording the arguments,
//! seeds, and SHA-256 fingerprints of the artifacts it produced.

use std::collections::BTreeMap;
use std::error::Error;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use wav2pos::model::Setup;
use wav2pos::ngcc::{delay_benchmark, pretrain_ngcc, NgccConfig, PretrainOptions};
use wav2pos::pipeline::train::save_ngcc_checkpoint;
use wav2pos::pipeline::{
    build_dataset, emit_plots, evaluate_model, evaluate_predictor, file_sha256, load_dataset,
    load_model_checkpoint, load_ngcc_checkpoint, localize_classical, train_model, write_manifest,
    ClassicalOptions, DatasetSpec, EvalOptions, EvalReport, Features, FrameRecord, GeometryKind,
    SourceKind, SweepPoint, TrainConfig,
};
use wav2pos::room::Scene;

#[derive(Parser)]
#[command(name = "wav2pos", version, about = "Sound-source localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene dataset into a directory.
    Simulate(SimulateArgs),
    /// Pretrain the delay-classifier correlation front-end.
    TrainNgcc(TrainNgccArgs),
    /// Train the localization model from a flat key=value config file.
    Train(TrainArgs),
    /// Evaluate a model checkpoint on a stored dataset.
    Eval(EvalArgs),
    /// Localize every scene from correlation peaks, without a model.
    LocalizeClassical(ClassicalArgs),
    /// Render curves (CSV and SVG) from evaluation outputs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Recipe to start from: desk-train or compact-anechoic.
    #[arg(long, default_value = "desk-train")]
    preset: String,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Geometry: random-faces, compact, or luvira-like.
    #[arg(long)]
    geometry: Option<GeometryKind>,
    /// Room dimensions, metres, e.g. "4x5x2.5".
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    t60_min: Option<f64>,
    #[arg(long)]
    t60_max: Option<f64>,
    /// Source material: speech or chirps.
    #[arg(long)]
    source: Option<SourceKind>,
    /// Stored samples per scene.
    #[arg(long)]
    samples: Option<usize>,
    /// Noise baked into the stored frames, dB ("inf" stores clean).
    #[arg(long)]
    snr: Option<f64>,
    /// Reject scenes whose frames fall below this power, dB.
    #[arg(long)]
    gate_db: Option<f64>,
    /// Impulse-response length cap, samples (0 removes the cap).
    #[arg(long)]
    rir_cap: Option<usize>,
}

#[derive(Args)]
struct TrainNgccArgs {
    /// Stored dataset to train on.
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory for the checkpoint, log, and manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    pairs_per_scene: usize,
    #[arg(long, default_value_t = 8)]
    batch_pairs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Trailing fraction of scenes held out for validation.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Largest delay magnitude the classifier covers, samples.
    #[arg(long, default_value_t = 32)]
    tau: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 65)]
    filter_len: usize,
    #[arg(long, default_value_t = 32)]
    head_hidden: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value training config file.
    #[arg(long)]
    config: PathBuf,
    /// Run directory for checkpoints, the epoch log, and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Continue after the last completed epoch recorded in the run
    /// directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Stored dataset to evaluate on.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for records, summary, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Masking protocol: 1a, 1b, 2a, or 2b.
    #[arg(long, default_value = "1a")]
    setup: Setup,
    /// Microphones with known coordinates; defaults to all of them.
    #[arg(long)]
    m_known: Option<usize>,
    /// Noise added before evaluation, dB ("inf" evaluates clean).
    #[arg(long, default_value_t = f64::INFINITY)]
    snr: f64,
    /// Model window length; defaults to what the checkpoint was
    /// trained with.
    #[arg(long)]
    frame: Option<usize>,
    /// TDOA features: gcc, ngcc, or none; defaults to gcc when the
    /// checkpoint has a TDOA module and none otherwise.
    #[arg(long)]
    feature: Option<String>,
    /// Pretrained front-end, required with --feature ngcc.
    #[arg(long)]
    ngcc_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Name recorded in the summary; defaults to the output directory
    /// name.
    #[arg(long, default_value = "")]
    label: String,
}

#[derive(Args)]
struct ClassicalArgs {
    /// Stored dataset to evaluate on.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for records, summary, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Robust consensus over several peaks per pair instead of least
    /// squares on the strongest peak.
    #[arg(long)]
    ransac: bool,
    /// Correlation peaks considered per pair.
    #[arg(long, default_value_t = 4)]
    num_peaks: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Noise added before evaluation, dB ("inf" evaluates clean).
    #[arg(long, default_value_t = f64::INFINITY)]
    snr: f64,
    #[arg(long, default_value = "")]
    label: String,
}

#[derive(Args)]
struct PlotArgs {
    /// Output directory for the curve files.
    #[arg(long)]
    out: PathBuf,
    /// Sweep list file: lines of `<snr_db> <path/to/summary.txt>`.
    #[arg(long)]
    snr_sweep: Option<PathBuf>,
    /// Sweep list file: lines of `<t60_s> <path/to/summary.txt>`.
    #[arg(long)]
    t60_sweep: Option<PathBuf>,
    /// De-noising list file: lines of `<input_snr_db> <path/to/summary.txt>`.
    #[arg(long)]
    gain: Option<PathBuf>,
    /// records.csv to draw the error distribution from.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::TrainNgcc(a) => train_ngcc(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::LocalizeClassical(a) => classical(a),
        Command::Plot(a) => plot(a),
    }
}

fn kv(k: &str, v: impl Display) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn parse_dims(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(['x', ',']).collect();
    if parts.len() != 3 {
        return Err(format!("expected three dimensions like 4x5x2.5, got {s:?}"));
    }
    let mut dims = [0.0; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p.trim().parse::<f64>().map_err(|e| format!("bad dimension {p:?}: {e}"))?;
    }
    Ok(dims)
}

fn simulate(a: SimulateArgs) -> Result<(), Box<dyn Error>> {
    let mut spec = match a.preset.as_str() {
        "desk-train" => DatasetSpec::desk_train(a.count, 512, a.seed),
        "compact-anechoic" => DatasetSpec::compact_anechoic(a.count, a.seed),
        other => return Err(format!("unknown preset {other:?}").into()),
    };
    if let Some(g) = a.geometry {
        spec.kind = g;
    }
    if let Some(d) = &a.dims {
        spec.dims = parse_dims(d)?;
    }
    if let Some(t) = a.t60_min {
        spec.t60_range.0 = t;
    }
    if let Some(t) = a.t60_max {
        spec.t60_range.1 = t;
    }
    if let Some(s) = a.source {
        spec.source = s;
    }
    if let Some(n) = a.samples {
        spec.n_out = n;
    }
    if let Some(s) = a.snr {
        spec.snr_db = s;
    }
    if let Some(g) = a.gate_db {
        spec.power_gate_db = g;
    }
    if let Some(c) = a.rir_cap {
        spec.max_rir_len = if c == 0 { None } else { Some(c) };
    }

    let scenes = build_dataset(&a.out, &spec)?;
    let index = a.out.join("index.txt");
    let entries = vec![
        kv("command", command_line()),
        kv("preset", &a.preset),
        kv("geometry", spec.kind),
        kv("count", spec.count),
        kv("seed", spec.seed),
        kv("dims", format_dims(spec.dims)),
        kv("t60_min", spec.t60_range.0),
        kv("t60_max", spec.t60_range.1),
        kv("source", spec.source),
        kv("samples", spec.n_out),
        kv("snr_db", spec.snr_db),
        kv("power_gate_db", spec.power_gate_db),
        kv("rir_cap", spec.max_rir_len.map_or(0, |c| c)),
        kv("artifact.index.sha256", file_sha256(&index)?),
    ];
    write_manifest(&a.out.join("manifest.txt"), &entries)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

fn format_dims(d: [f64; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

fn train_ngcc(a: TrainNgccArgs) -> Result<(), Box<dyn Error>> {
    let stored = load_dataset(&a.dataset)?;
    let scenes: Vec<Scene> = stored.into_iter().map(|s| s.scene).collect();
    let config = NgccConfig {
        tau: a.tau,
        channels: a.channels,
        filter_len: a.filter_len,
        head_hidden: a.head_hidden,
    };
    let opts = PretrainOptions {
        epochs: a.epochs,
        pairs_per_scene: a.pairs_per_scene,
        batch_pairs: a.batch_pairs,
        lr: a.lr,
        weight_decay: a.weight_decay,
        val_fraction: a.val_fraction,
        seed: a.seed,
    };
    let (store, params, report) = pretrain_ngcc(&scenes, config, &opts)?;

    std::fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("ngcc.tns");
    save_ngcc_checkpoint(&ckpt, &store, &params)?;

    let mut log = String::from("epoch,train_loss,val_accuracy\n");
    for (e, (tl, va)) in report.train_loss.iter().zip(&report.val_accuracy).enumerate() {
        log.push_str(&format!("{e},{tl},{va}\n"));
    }
    let log_path = a.out.join("pretrain_log.csv");
    std::fs::write(&log_path, log)?;

    let n_val = ((scenes.len() as f64 * a.val_fraction).ceil() as usize).max(1).min(scenes.len());
    let val = &scenes[scenes.len() - n_val..];
    let bench = delay_benchmark(&store, &params, val, 4, a.seed ^ 0x5eed)?;

    let entries = vec![
        kv("command", command_line()),
        kv("dataset", a.dataset.display()),
        kv("epochs", a.epochs),
        kv("pairs_per_scene", a.pairs_per_scene),
        kv("batch_pairs", a.batch_pairs),
        kv("lr", a.lr),
        kv("weight_decay", a.weight_decay),
        kv("val_fraction", a.val_fraction),
        kv("seed", a.seed),
        kv("tau", a.tau),
        kv("channels", a.channels),
        kv("filter_len", a.filter_len),
        kv("head_hidden", a.head_hidden),
        kv("best_epoch", report.best_epoch),
        kv("val_pairs", bench.pairs),
        kv("ngcc_exact", bench.ngcc_exact),
        kv("ngcc_within_one", bench.ngcc_within_one),
        kv("gcc_exact", bench.gcc_exact),
        kv("gcc_within_one", bench.gcc_within_one),
        kv("artifact.ngcc.sha256", file_sha256(&ckpt)?),
        kv("artifact.log.sha256", file_sha256(&log_path)?),
    ];
    write_manifest(&a.out.join("manifest.txt"), &entries)?;
    println!(
        "pretrained: best epoch {}, val exact {:.3}, within one {:.3} (plain correlation {:.3})",
        report.best_epoch, bench.ngcc_exact, bench.ngcc_within_one, bench.gcc_exact
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Box<dyn Error>> {
    let config = TrainConfig::from_file(&a.config)?;
    let scenes = load_dataset(&config.dataset)?;
    let outcome = train_model(&scenes, &config, &a.out, a.resume)?;

    let mut entries = vec![kv("command", command_line())];
    entries.extend(config.to_entries());
    entries.push(kv("best_epoch", outcome.best_epoch));
    entries.push(kv("best_val_loss", outcome.best_val_loss));
    entries.push(kv("artifact.model_best.sha256", file_sha256(&outcome.best_path)?));
    entries.push(kv("artifact.latest.sha256", file_sha256(&outcome.latest_path)?));
    entries.push(kv("artifact.log.sha256", file_sha256(&outcome.log_path)?));
    write_manifest(&a.out.join("manifest.txt"), &entries)?;
    println!(
        "trained {} epochs, best val loss {:.4} at epoch {}",
        outcome.epochs.len(),
        outcome.best_val_loss,
        outcome.best_epoch
    );
    Ok(())
}

fn write_records(path: &Path, report: &EvalReport) -> Result<(), Box<dyn Error>> {
    let mut text = String::from("truth_x,truth_y,truth_z,est_x,est_y,est_z,error_m,converged\n");
    for r in &report.records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.truth[0],
            r.truth[1],
            r.truth[2],
            r.estimate[0],
            r.estimate[1],
            r.estimate[2],
            r.error_m,
            u8::from(r.converged)
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn summary_entries(report: &EvalReport) -> Vec<(String, String)> {
    let mut entries = vec![
        kv("label", &report.label),
        kv("frames", report.records.len()),
        kv("mae_cm", report.mae_cm),
        kv("acc_at_30cm", report.acc_at_30cm),
        kv("mae_ci_lo_cm", report.mae_ci_cm.0),
        kv("mae_ci_hi_cm", report.mae_ci_cm.1),
        kv("acc_ci_lo", report.acc_ci.0),
        kv("acc_ci_hi", report.acc_ci.1),
    ];
    if let Some(v) = report.mic_mae_cm {
        entries.push(kv("mic_mae_cm", v));
    }
    if let Some(v) = report.input_snr_db {
        entries.push(kv("input_snr_db", v));
    }
    if let Some(v) = report.output_snr_db {
        entries.push(kv("output_snr_db", v));
    }
    if let Some(v) = report.recon_gain_db {
        entries.push(kv("recon_gain_db", v));
    }
    entries
}

fn print_headline(report: &EvalReport) {
    println!(
        "{}: {} frames, MAE {:.1} cm [{:.1}, {:.1}], acc@30cm {:.3} [{:.3}, {:.3}]",
        report.label,
        report.records.len(),
        report.mae_cm,
        report.mae_ci_cm.0,
        report.mae_ci_cm.1,
        report.acc_at_30cm,
        report.acc_ci.0,
        report.acc_ci.1
    );
    if let Some(g) = report.recon_gain_db {
        println!(
            "  reconstruction: input {:.1} dB, output {:.1} dB, gain {:.1} dB",
            report.input_snr_db.unwrap(),
            report.output_snr_db.unwrap(),
            g
        );
    }
    if let Some(m) = report.mic_mae_cm {
        println!("  hidden microphones: MAE {m:.1} cm");
    }
}

fn default_label(label: &str, out: &Path) -> String {
    if label.is_empty() {
        out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        label.to_string()
    }
}

fn eval(a: EvalArgs) -> Result<(), Box<dyn Error>> {
    let (store, params) = load_model_checkpoint(&a.checkpoint)?;
    let stored = load_dataset(&a.dataset)?;
    let scenes: Vec<Scene> = stored.into_iter().map(|s| s.scene).collect();
    if scenes.is_empty() {
        return Err("dataset is empty".into());
    }
    let m_total = scenes.iter().map(|s| s.num_mics()).min().unwrap();
    let feature = match &a.feature {
        Some(f) => f.clone(),
        None => if params.config.use_tdoa { "gcc" } else { "none" }.to_string(),
    };
    let ngcc = match feature.as_str() {
        "ngcc" => {
            let path = a
                .ngcc_checkpoint
                .as_ref()
                .ok_or("--feature ngcc needs --ngcc-checkpoint")?;
            Some(load_ngcc_checkpoint(path)?)
        }
        "gcc" | "none" => None,
        other => return Err(format!("unknown feature kind {other:?}").into()),
    };
    let features = match (feature.as_str(), &ngcc) {
        ("gcc", _) => Features::Gcc,
        ("none", _) => Features::None,
        (_, Some((s, p))) => Features::Ngcc(s, p),
        _ => unreachable!(),
    };

    let opts = EvalOptions {
        setup: a.setup,
        m_known: a.m_known.unwrap_or(m_total),
        n_out: a.frame.unwrap_or(params.config.n),
        snr_db: a.snr,
        seed: a.seed,
        label: default_label(&a.label, &a.out),
    };
    let report = evaluate_model(&store, &params, &features, &scenes, &opts)?;

    std::fs::create_dir_all(&a.out)?;
    let records_path = a.out.join("records.csv");
    let summary_path = a.out.join("summary.txt");
    write_records(&records_path, &report)?;
    write_manifest(&summary_path, &summary_entries(&report))?;

    let mut entries = vec![
        kv("command", command_line()),
        kv("checkpoint", a.checkpoint.display()),
        kv("dataset", a.dataset.display()),
        kv("setup", a.setup),
        kv("m_known", opts.m_known),
        kv("frame", opts.n_out),
        kv("snr_db", opts.snr_db),
        kv("feature", &feature),
        kv("seed", opts.seed),
        kv("checkpoint.sha256", file_sha256(&a.checkpoint)?),
        kv("artifact.records.sha256", file_sha256(&records_path)?),
        kv("artifact.summary.sha256", file_sha256(&summary_path)?),
    ];
    if let Some(p) = &a.ngcc_checkpoint {
        entries.push(kv("ngcc_checkpoint", p.display()));
    }
    write_manifest(&a.out.join("manifest.txt"), &entries)?;
    print_headline(&report);
    Ok(())
}

fn classical(a: ClassicalArgs) -> Result<(), Box<dyn Error>> {
    let stored = load_dataset(&a.dataset)?;
    let scenes: Vec<Scene> = stored.into_iter().map(|s| s.scene).collect();
    if scenes.is_empty() {
        return Err("dataset is empty".into());
    }
    let n_out = scenes.iter().map(|s| s.source.len()).min().unwrap();
    let copts = ClassicalOptions {
        num_peaks: a.num_peaks,
        ransac: a.ransac,
        seed: a.seed,
        ..ClassicalOptions::default()
    };
    let opts = EvalOptions {
        setup: Setup::OneA,
        m_known: scenes.iter().map(|s| s.num_mics()).min().unwrap(),
        n_out,
        snr_db: a.snr,
        seed: a.seed,
        label: default_label(&a.label, &a.out),
    };
    let report = evaluate_predictor(
        |scene| {
            let r = localize_classical(scene, &copts)?;
            Ok((r.position, r.converged))
        },
        &scenes,
        &opts,
    )?;

    std::fs::create_dir_all(&a.out)?;
    let records_path = a.out.join("records.csv");
    let summary_path = a.out.join("summary.txt");
    write_records(&records_path, &report)?;
    write_manifest(&summary_path, &summary_entries(&report))?;
    let entries = vec![
        kv("command", command_line()),
        kv("dataset", a.dataset.display()),
        kv("ransac", a.ransac),
        kv("num_peaks", a.num_peaks),
        kv("seed", a.seed),
        kv("snr_db", a.snr),
        kv("artifact.records.sha256", file_sha256(&records_path)?),
        kv("artifact.summary.sha256", file_sha256(&summary_path)?),
    ];
    write_manifest(&a.out.join("manifest.txt"), &entries)?;
    print_headline(&report);
    Ok(())
}

fn read_summary(path: &Path) -> Result<BTreeMap<String, String>, Box<dyn Error>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

fn summary_value(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64, Box<dyn Error>> {
    map.get(key)
        .ok_or_else(|| format!("{}: missing {key}", path.display()))?
        .parse::<f64>()
        .map_err(|e| format!("{}: bad {key}: {e}", path.display()).into())
}

/// A summary reduced to the fields the curves use.
fn report_from_summary(path: &Path) -> Result<EvalReport, Box<dyn Error>> {
    let map = read_summary(path)?;
    let get = |key: &str| summary_value(&map, key, path);
    Ok(EvalReport {
        label: map.get("label").cloned().unwrap_or_default(),
        records: Vec::new(),
        mae_cm: get("mae_cm")?,
        acc_at_30cm: get("acc_at_30cm")?,
        mae_ci_cm: (get("mae_ci_lo_cm")?, get("mae_ci_hi_cm")?),
        acc_ci: (get("acc_ci_lo")?, get("acc_ci_hi")?),
        mic_mae_cm: get("mic_mae_cm").ok(),
        input_snr_db: get("input_snr_db").ok(),
        output_snr_db: get("output_snr_db").ok(),
        recon_gain_db: get("recon_gain_db").ok(),
    })
}

/// Reads a sweep list file: `<x> <path>` per line, blank lines and
/// `#` comments skipped. Paths are relative to the list file.
fn read_sweep_list(path: &Path) -> Result<Vec<(f64, PathBuf)>, Box<dyn Error>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (x, p) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format!("{}:{}: expected `<x> <path>`", path.display(), i + 1))?;
        let x = x
            .parse::<f64>()
            .map_err(|e| format!("{}:{}: bad x value: {e}", path.display(), i + 1))?;
        let p = base.join(p.trim());
        out.push((x, p));
    }
    Ok(out)
}

fn read_sweep(path: &Path) -> Result<Vec<SweepPoint>, Box<dyn Error>> {
    let mut points = Vec::new();
    for (x, p) in read_sweep_list(path)? {
        points.push(SweepPoint { x, report: report_from_summary(&p)? });
    }
    Ok(points)
}

fn read_gain_curve(path: &Path) -> Result<Vec<(f64, f64)>, Box<dyn Error>> {
    let mut points = Vec::new();
    for (x, p) in read_sweep_list(path)? {
        let map = read_summary(&p)?;
        points.push((x, summary_value(&map, "output_snr_db", &p)?));
    }
    Ok(points)
}

/// Reads a records.csv back into frame records for the distribution
/// curve.
fn read_records(path: &Path) -> Result<Vec<FrameRecord>, Box<dyn Error>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("{}:{}: expected 8 columns", path.display(), i + 1).into());
        }
        let p = |s: &str| s.parse::<f64>().map_err(|e| format!("{}:{}: {e}", path.display(), i + 1));
        out.push(FrameRecord {
            truth: [p(f[0])?, p(f[1])?, p(f[2])?],
            estimate: [p(f[3])?, p(f[4])?, p(f[5])?],
            error_m: p(f[6])?,
            converged: f[7].trim() != "0",
        });
    }
    Ok(out)
}

fn plot(a: PlotArgs) -> Result<(), Box<dyn Error>> {
    let snr = match &a.snr_sweep {
        Some(p) => read_sweep(p)?,
        None => Vec::new(),
    };
    let t60 = match &a.t60_sweep {
        Some(p) => read_sweep(p)?,
        None => Vec::new(),
    };
    let gain = match &a.gain {
        Some(p) => read_gain_curve(p)?,
        None => Vec::new(),
    };
    let cdf = match &a.cdf {
        Some(p) => {
            let records = read_records(p)?;
            let n = records.len();
            if n == 0 {
                return Err(format!("{}: no records", p.display()).into());
            }
            Some(EvalReport {
                label: String::new(),
                records,
                mae_cm: 0.0,
                acc_at_30cm: 0.0,
                mae_ci_cm: (0.0, 0.0),
                acc_ci: (0.0, 0.0),
                mic_mae_cm: None,
                input_snr_db: None,
                output_snr_db: None,
                recon_gain_db: None,
            })
        }
        None => None,
    };
    if snr.is_empty() && t60.is_empty() && gain.is_empty() && cdf.is_none() {
        return Err("nothing to plot; pass at least one input".into());
    }
    let written = emit_plots(&a.out, &snr, &t60, &gain, cdf.as_ref())?;
    let mut entries = vec![kv("command", command_line())];
    for p in &written {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        entries.push(kv(&format!("artifact.{name}.sha256"), file_sha256(p)?));
    }
    write_manifest(&a.out.join("manifest.txt"), &entries)?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
