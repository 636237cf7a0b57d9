//! Evaluation: per-frame localization records, truncated-error metrics
//! with bootstrap confidence intervals, rank correlation for sweep
//! trends, and the classical correlation-peak localization baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape};
use crate::model::{extract_predictions, forward, MaskSpec, ModelParams, Phase, SceneTokens, Setup};
use crate::multilateration::{
    extract_peaks, ransac_localize, solve_tdoa_ls, LocalizationResult, PairCandidates,
    RansacConfig, TdoaMeasurement,
};
use crate::ngcc::{gcc_features, ngcc_features, NgccParams};
use crate::pipeline::dataset::{augment_scene, room_tau};
use crate::pipeline::PipelineError;
use crate::room::Scene;
use crate::signal::{gcc_phat, measure_snr, AudioFrame};
use crate::SAMPLE_RATE;

/// Errors beyond this distance count as this distance, metres.
pub const ERROR_TRUNCATION_M: f64 = 3.0;

/// Localization within this radius counts as a hit, metres.
pub const ACCURACY_RADIUS_M: f64 = 0.30;

const BOOTSTRAP_RESAMPLES: usize = 1000;

/// One evaluated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub truth: [f64; 3],
    pub estimate: [f64; 3],
    /// Raw (untruncated) distance error, metres.
    pub error_m: f64,
    pub converged: bool,
}

/// Aggregated evaluation results for one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub records: Vec<FrameRecord>,
    /// Mean error in centimetres after truncation at 3 m.
    pub mae_cm: f64,
    /// Fraction of frames with error under 0.30 m.
    pub acc_at_30cm: f64,
    /// Percentile bootstrap 95% interval for `mae_cm`.
    pub mae_ci_cm: (f64, f64),
    /// Percentile bootstrap 95% interval for `acc_at_30cm`.
    pub acc_ci: (f64, f64),
    /// Mean error over microphones with hidden coordinates,
    /// centimetres; present for the partly-known-array setups.
    pub mic_mae_cm: Option<f64>,
    /// Mean input SNR of the received frames, dB; present when the
    /// condition adds noise.
    pub input_snr_db: Option<f64>,
    /// Mean output SNR of the reconstructed frames, dB.
    pub output_snr_db: Option<f64>,
    /// `output_snr_db - input_snr_db`.
    pub recon_gain_db: Option<f64>,
}

/// Which per-pair TDOA feature evaluation feeds the model.
pub enum Features<'a> {
    /// The model has no TDOA module.
    None,
    /// Whitened cross-correlation features.
    Gcc,
    /// The pretrained delay-classifier front-end.
    Ngcc(&'a ParamStore<f32>, &'a NgccParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub setup: Setup,
    /// Microphones with known coordinates. For the restricted-array
    /// setups this is also the number of microphones kept.
    pub m_known: usize,
    /// Model frame length; the centre window of each stored frame.
    pub n_out: usize,
    /// Noise injected before evaluation, dB; `inf` evaluates clean.
    pub snr_db: f64,
    pub seed: u64,
    pub label: String,
}

impl EvalOptions {
    pub fn new(setup: Setup, m_known: usize, n_out: usize) -> EvalOptions {
        EvalOptions {
            setup,
            m_known,
            n_out,
            snr_db: f64::INFINITY,
            seed: 7,
            label: String::new(),
        }
    }
}

/// Deterministic per-scene evaluation view: centre window plus
/// condition noise from a stream tied to the scene index only.
fn condition_view(
    scene: &Scene,
    opts: &EvalOptions,
    index: usize,
) -> Result<Scene, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1 + index as u64);
    augment_scene(scene, opts.n_out, 0, opts.snr_db, &mut rng)
}

/// Runs the model over `scenes` under one protocol and condition.
pub fn evaluate_model(
    store: &ParamStore<f32>,
    params: &ModelParams,
    features: &Features,
    scenes: &[Scene],
    opts: &EvalOptions,
) -> Result<EvalReport, PipelineError> {
    if scenes.is_empty() {
        return Err(PipelineError::Eval("no scenes to evaluate".into()));
    }
    let mut records = Vec::with_capacity(scenes.len());
    let mut mic_errs: Vec<f64> = Vec::new();
    let mut in_snrs: Vec<f64> = Vec::new();
    let mut out_snrs: Vec<f64> = Vec::new();

    for (k, scene) in scenes.iter().enumerate() {
        let view = condition_view(scene, opts, k)?;
        let restricted = matches!(opts.setup, Setup::OneA | Setup::OneB)
            && opts.m_known < view.num_mics();
        let eval_scene = if restricted {
            let keep: Vec<usize> = (0..opts.m_known).collect();
            view.restrict(&keep)
        } else {
            view
        };
        let total = eval_scene.num_mics();
        let mask = MaskSpec::for_setup(opts.setup, opts.m_known.min(total), total)?;

        let feats = match features {
            Features::None => None,
            Features::Gcc => Some(gcc_features(&eval_scene, &mask, params.config.tau)?),
            Features::Ngcc(fs, fp) => Some(ngcc_features(fs, fp, &eval_scene, &mask)?),
        };
        let tokens = SceneTokens::from_scene(&eval_scene, &mask, opts.n_out)?;
        let mut tape: Tape<f32> = Tape::new();
        let out = forward(&mut tape, store, params, &tokens, feats.as_ref(), Phase::Eval)?;
        let pred = extract_predictions(&tape, &out);

        let err = dist3(pred.source, eval_scene.source_pos);
        records.push(FrameRecord {
            truth: eval_scene.source_pos,
            estimate: pred.source,
            error_m: err,
            converged: true,
        });

        for m in (opts.m_known + 1)..=total {
            mic_errs.push(dist3(pred.mics[m - 1], eval_scene.mic_pos[m - 1]));
        }

        if opts.snr_db.is_finite() {
            for &m in &out.audio_order {
                if m == 0 {
                    continue;
                }
                let inp = measure_snr(&eval_scene.clean[m - 1], &eval_scene.received[m - 1])?;
                let scaled_clean =
                    AudioFrame::new(tokens.clean[&m].clone(), SAMPLE_RATE);
                let recon = AudioFrame::new(pred.recon[&m].clone(), SAMPLE_RATE);
                let outp = measure_snr(&scaled_clean, &recon)?;
                in_snrs.push(inp);
                out_snrs.push(outp);
            }
        }
    }

    let (mae_cm, acc, mae_ci, acc_ci) = summarize(&records, opts.seed);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let input_snr_db = (!in_snrs.is_empty()).then(|| mean(&in_snrs));
    let output_snr_db = (!out_snrs.is_empty()).then(|| mean(&out_snrs));
    Ok(EvalReport {
        label: opts.label.clone(),
        records,
        mae_cm,
        acc_at_30cm: acc,
        mae_ci_cm: mae_ci,
        acc_ci,
        mic_mae_cm: (!mic_errs.is_empty()).then(|| 100.0 * mean(&mic_errs)),
        input_snr_db,
        output_snr_db,
        recon_gain_db: input_snr_db.zip(output_snr_db).map(|(i, o)| o - i),
    })
}

/// Evaluates any per-scene position predictor (oracle, room centre,
/// classical localization) through the same windows, conditions, and
/// metric path as the model.
pub fn evaluate_predictor(
    mut predict: impl FnMut(&Scene) -> Result<([f64; 3], bool), PipelineError>,
    scenes: &[Scene],
    opts: &EvalOptions,
) -> Result<EvalReport, PipelineError> {
    if scenes.is_empty() {
        return Err(PipelineError::Eval("no scenes to evaluate".into()));
    }
    let mut records = Vec::with_capacity(scenes.len());
    for (k, scene) in scenes.iter().enumerate() {
        let view = condition_view(scene, opts, k)?;
        let (estimate, converged) = predict(&view)?;
        records.push(FrameRecord {
            truth: view.source_pos,
            estimate,
            error_m: dist3(estimate, view.source_pos),
            converged,
        });
    }
    let (mae_cm, acc, mae_ci, acc_ci) = summarize(&records, opts.seed);
    Ok(EvalReport {
        label: opts.label.clone(),
        records,
        mae_cm,
        acc_at_30cm: acc,
        mae_ci_cm: mae_ci,
        acc_ci,
        mic_mae_cm: None,
        input_snr_db: None,
        output_snr_db: None,
        recon_gain_db: None,
    })
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Truncated-MAE (cm) and hit-rate point estimates with percentile
/// bootstrap intervals: 1000 seeded resamples of the frame set with
/// replacement, interval endpoints at the 25th and 975th order
/// statistics of the resampled means.
fn summarize(records: &[FrameRecord], seed: u64) -> (f64, f64, (f64, f64), (f64, f64)) {
    let errs_cm: Vec<f64> =
        records.iter().map(|r| 100.0 * r.error_m.min(ERROR_TRUNCATION_M)).collect();
    let hits: Vec<f64> = records
        .iter()
        .map(|r| if r.error_m < ACCURACY_RADIUS_M { 1.0 } else { 0.0 })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mae = mean(&errs_cm);
    let acc = mean(&hits);

    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut accs = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut se = 0.0;
        let mut sh = 0.0;
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            se += errs_cm[i];
            sh += hits[i];
        }
        maes.push(se / n as f64);
        accs.push(sh / n as f64);
    }
    maes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = BOOTSTRAP_RESAMPLES / 40;
    let hi = BOOTSTRAP_RESAMPLES - 1 - BOOTSTRAP_RESAMPLES / 40;
    (mae, acc, (maes[lo], maes[hi]), (accs[lo], accs[hi]))
}

/// Average ranks (ties share the mean of their positions), 1-based.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "rank correlation needs paired samples");
    assert!(xs.len() >= 2, "rank correlation needs at least two pairs");
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        let a = rx[i] - mx;
        let b = ry[i] - my;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    num / (dx * dy).sqrt()
}

/// Knobs for [`localize_classical`].
#[derive(Debug, Clone)]
pub struct ClassicalOptions {
    /// Correlation peaks considered per pair.
    pub num_peaks: usize,
    /// Robust consensus over peak candidates instead of plain least
    /// squares on the strongest peak.
    pub ransac: bool,
    pub ransac_config: RansacConfig,
    pub seed: u64,
}

impl Default for ClassicalOptions {
    fn default() -> Self {
        ClassicalOptions {
            num_peaks: 4,
            ransac: false,
            ransac_config: RansacConfig::default(),
            seed: 11,
        }
    }
}

/// Localizes a scene's source from whitened cross-correlation peaks
/// over all microphone pairs, without any learned component.
pub fn localize_classical(
    scene: &Scene,
    opts: &ClassicalOptions,
) -> Result<LocalizationResult, PipelineError> {
    let m = scene.num_mics();
    let tau = room_tau(scene.room.dims);
    let fs = SAMPLE_RATE as f64;
    let mut measurements = Vec::new();
    let mut candidates = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let corr = gcc_phat(&scene.received[i], &scene.received[j], tau)?;
            let peaks = extract_peaks(&corr, opts.num_peaks);
            if peaks.is_empty() {
                continue;
            }
            measurements.push(TdoaMeasurement {
                mic_i: i,
                mic_j: j,
                delay_s: peaks[0].lag / fs,
            });
            candidates.push(PairCandidates {
                mic_i: i,
                mic_j: j,
                delays_s: peaks.iter().map(|p| p.lag / fs).collect(),
            });
        }
    }
    if opts.ransac {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let r = ransac_localize(&candidates, &scene.mic_pos, &opts.ransac_config, &mut rng)?;
        Ok(r.result)
    } else {
        Ok(solve_tdoa_ls(&measurements, &scene.mic_pos, None)?)
    }
}
