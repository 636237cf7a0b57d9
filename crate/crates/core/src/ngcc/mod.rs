//! Learnable time-difference frontend: a bank of trainable FIR filters
//! feeding per-channel whitened cross-correlations, combined by a small
//! head shared across lags into logits over integer delays. Trained as
//! a delay classifier on microphone pairs, then frozen to produce
//! bounded pairwise correlation features and single-peak delay
//! estimates.

use crate::autograd::{
    AdamW, AdamWConfig, Grads, NodeId, ParamId, ParamStore, Scalar, Tape, Tensor,
};
use crate::model::{MaskSpec, ModelError};
use crate::room::Scene;
use crate::signal::{self, AudioFrame, SignalError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;


#[derive(Debug, Error)]
pub enum NgccError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("frame lengths differ: {left} vs {right}")]
    FrameMismatch { left: usize, right: usize },
    #[error("frames of {len} samples cannot resolve delays up to {tau}")]
    FrameTooShort { len: usize, tau: usize },
    #[error("silent frame carries no delay information")]
    SilentFrame,
    #[error("need at least 2 visible microphone frames, got {0}")]
    TooFewAudio(usize),
    #[error("no training pairs with delays inside the classifier range")]
    NoTrainingPairs,
    #[error("parameter {0} missing from the store")]
    MissingParam(&'static str),
    #[error(transparent)]
    Mask(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Shape of the delay classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgccConfig {
    /// Largest delay magnitude in samples; logits cover `-tau..=tau`.
    pub tau: usize,
    /// Number of learnable FIR filters.
    pub channels: usize,
    /// Taps per filter; must be odd.
    pub filter_len: usize,
    /// Hidden width of the shared per-lag head.
    pub head_hidden: usize,
}

impl NgccConfig {
    /// Small configuration that pretrains in minutes on one core.
    pub fn desk() -> NgccConfig {
        NgccConfig { tau: 32, channels: 8, filter_len: 65, head_hidden: 32 }
    }

    pub fn num_lags(&self) -> usize {
        2 * self.tau + 1
    }

    pub fn validate(&self) -> Result<(), NgccError> {
        if self.tau < 1 {
            return Err(NgccError::InvalidConfig("tau must be at least 1"));
        }
        if self.channels < 1 {
            return Err(NgccError::InvalidConfig("need at least one filter channel"));
        }
        if self.filter_len < 3 || self.filter_len.is_multiple_of(2) {
            return Err(NgccError::InvalidConfig("filter length must be odd and at least 3"));
        }
        if self.head_hidden < 1 {
            return Err(NgccError::InvalidConfig("head hidden width must be at least 1"));
        }
        Ok(())
    }
}

/// Handles to the classifier's parameters inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct NgccParams {
    pub config: NgccConfig,
    /// One FIR kernel per channel, each `[filter_len]`.
    pub filters: Vec<ParamId>,
    /// First head layer `[channels, head_hidden]` and its bias.
    pub w1: ParamId,
    pub b1: ParamId,
    /// Output head layer `[1, head_hidden]`; a per-lag output bias is
    /// omitted because a shift common to all lags cannot change the
    /// class probabilities.
    pub w2: ParamId,
}

/// Hann-windowed ideal band-pass kernel for one channel of an even
/// split of `0..Nyquist`.
fn band_pass_kernel(channel: usize, channels: usize, len: usize) -> Vec<f64> {
    let center = (len - 1) / 2;
    let w_lo = PI * channel as f64 / channels as f64;
    let w_hi = PI * (channel + 1) as f64 / channels as f64;
    (0..len)
        .map(|n| {
            let k = n as f64 - center as f64;
            let ideal = if k == 0.0 {
                (w_hi - w_lo) / PI
            } else {
                ((w_hi * k).sin() - (w_lo * k).sin()) / (PI * k)
            };
            let hann = 0.5 * (1.0 - (2.0 * PI * n as f64 / (len - 1) as f64).cos());
            ideal * hann
        })
        .collect()
}

impl NgccParams {
    /// Registers fresh parameters: filters start as a band-pass bank
    /// splitting the spectrum evenly, the hidden head layer starts
    /// small-random, and the output layer starts at zero so an
    /// untrained classifier is exactly uniform over delays.
    pub fn init<S: Scalar>(
        config: NgccConfig,
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
    ) -> Result<NgccParams, NgccError> {
        config.validate()?;
        let filters = (0..config.channels)
            .map(|c| {
                let taps = band_pass_kernel(c, config.channels, config.filter_len)
                    .into_iter()
                    .map(S::from_f)
                    .collect();
                store.register(&format!("ngcc.filter.{c}"), Tensor::vector(taps))
            })
            .collect();
        let w1 =
            store.register_normal("ngcc.head.w1", &[config.channels, config.head_hidden], 0.02, rng);
        let b1 = store.register_normal("ngcc.head.b1", &[config.head_hidden], 0.02, rng);
        let w2 = store.register("ngcc.head.w2", Tensor::zeros(&[1, config.head_hidden]));
        Ok(NgccParams { config, filters, w1, b1, w2 })
    }

    /// Rebinds parameter handles by name after loading a checkpoint
    /// into `store`.
    pub fn from_store<S: Scalar>(
        config: NgccConfig,
        store: &ParamStore<S>,
    ) -> Result<NgccParams, NgccError> {
        config.validate()?;
        let mut filters = Vec::with_capacity(config.channels);
        for c in 0..config.channels {
            filters.push(
                store
                    .id_of(&format!("ngcc.filter.{c}"))
                    .ok_or(NgccError::MissingParam("ngcc.filter"))?,
            );
        }
        let w1 = store.id_of("ngcc.head.w1").ok_or(NgccError::MissingParam("ngcc.head.w1"))?;
        let b1 = store.id_of("ngcc.head.b1").ok_or(NgccError::MissingParam("ngcc.head.b1"))?;
        let w2 = store.id_of("ngcc.head.w2").ok_or(NgccError::MissingParam("ngcc.head.w2"))?;
        Ok(NgccParams { config, filters, w1, b1, w2 })
    }
}

/// Unit-power copy of a frame as a tape constant. Whitened correlations
/// ignore a common scale, but the filter nonlinearity does not, so a
/// fixed input level keeps the classifier level-invariant.
fn normalized_constant<S: Scalar>(
    tape: &mut Tape<S>,
    frame: &AudioFrame,
) -> Result<NodeId, NgccError> {
    let rms = frame.mean_power().sqrt();
    if rms <= 0.0 {
        return Err(NgccError::SilentFrame);
    }
    let data = frame.samples.iter().map(|&x| S::from_f(x / rms)).collect();
    Ok(tape.constant(Tensor::vector(data)))
}

/// Builds the classifier forward pass on `tape` and returns the logits
/// node, one logit per delay in `-tau..=tau`.
///
/// Each frame is normalized, filtered by every channel, passed through
/// a GELU (without it the whitening step would cancel the filters
/// exactly), and cross-correlated per channel with PHAT weighting. A
/// two-layer head shared across lags mixes the per-lag channel values
/// into one logit, so swapping the inputs flips the logit vector.
pub fn ngcc_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &NgccParams,
    a: &AudioFrame,
    b: &AudioFrame,
) -> Result<NodeId, NgccError> {
    let config = &params.config;
    if a.len() != b.len() {
        return Err(NgccError::FrameMismatch { left: a.len(), right: b.len() });
    }
    if a.len() <= config.tau {
        return Err(NgccError::FrameTooShort { len: a.len(), tau: config.tau });
    }
    let na = normalized_constant(tape, a)?;
    let nb = normalized_constant(tape, b)?;
    let mut channel_rows = Vec::with_capacity(config.channels);
    for &filter in &params.filters {
        let kernel = tape.param(store, filter);
        let fa = tape.conv1d_same(na, kernel);
        let fa = tape.gelu(fa);
        let fb = tape.conv1d_same(nb, kernel);
        let fb = tape.gelu(fb);
        channel_rows.push(tape.gcc_phat(fa, fb, config.tau));
    }
    let by_channel = tape.stack_rows(&channel_rows);
    let by_lag = tape.transpose(by_channel);
    let w1 = tape.param(store, params.w1);
    let b1 = tape.param(store, params.b1);
    let hidden = tape.linear(by_lag, w1, b1);
    let hidden = tape.gelu(hidden);
    let w2 = tape.param(store, params.w2);
    let logits_row = tape.matmul_nt(w2, hidden);
    Ok(tape.row(logits_row, 0))
}

/// Frozen-inference logits as plain numbers.
pub fn ngcc_logits(
    store: &ParamStore<f32>,
    params: &NgccParams,
    a: &AudioFrame,
    b: &AudioFrame,
) -> Result<Vec<f64>, NgccError> {
    let mut tape = Tape::<f32>::new();
    let logits = ngcc_forward(&mut tape, store, params, a, b)?;
    Ok(tape.value(logits).data().iter().map(|x| x.to_f()).collect())
}

/// Index of the largest value, first occurrence winning, as a lag.
fn argmax_lag(values: &[f64], tau: usize) -> i64 {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best as i64 - tau as i64
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Pairwise delay features for every ordered pair of visible
/// microphone frames, keyed by 1-based microphone index as used in
/// [`MaskSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaFeatureMap {
    tau: usize,
    entries: BTreeMap<(usize, usize), Vec<f64>>,
}

impl TdoaFeatureMap {
    /// Builds a map from explicit per-pair feature vectors, each of
    /// length `2 * tau + 1`.
    pub fn from_entries(
        tau: usize,
        entries: BTreeMap<(usize, usize), Vec<f64>>,
    ) -> Result<TdoaFeatureMap, NgccError> {
        let want = 2 * tau + 1;
        if entries.values().any(|v| v.len() != want) {
            return Err(NgccError::InvalidConfig("feature vectors must have length 2*tau+1"));
        }
        Ok(TdoaFeatureMap { tau, entries })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Feature vector over lags `-tau..=tau` for the ordered pair
    /// `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.entries.get(&(i, j)).map(|v| v.as_slice())
    }

    /// Number of ordered pairs present.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), &[f64])> {
        self.entries.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    /// Single-peak delay estimate in seconds for the ordered pair.
    pub fn delay_estimate(&self, i: usize, j: usize) -> Option<f64> {
        self.get(i, j)
            .map(|v| argmax_lag(v, self.tau) as f64 / crate::SAMPLE_RATE as f64)
    }
}

/// Builds a feature map closure over the visible microphone pairs: one
/// inference per unordered pair, the reverse direction filled by
/// reversing the lag axis so the pair symmetry holds exactly.
fn build_feature_map<F>(
    scene: &Scene,
    mask: &MaskSpec,
    tau: usize,
    mut features: F,
) -> Result<TdoaFeatureMap, NgccError>
where
    F: FnMut(&AudioFrame, &AudioFrame) -> Result<Vec<f64>, NgccError>,
{
    mask.validate(scene.num_mics())?;
    let mics = mask.audio_mics();
    if mics.len() < 2 {
        return Err(NgccError::TooFewAudio(mics.len()));
    }
    let mut entries = BTreeMap::new();
    for x in 0..mics.len() {
        for y in x + 1..mics.len() {
            let (i, j) = (mics[x], mics[y]);
            let forward = features(&scene.received[i - 1], &scene.received[j - 1])?;
            let mut backward = forward.clone();
            backward.reverse();
            entries.insert((i, j), forward);
            entries.insert((j, i), backward);
        }
    }
    Ok(TdoaFeatureMap { tau, entries })
}

/// Class probabilities from the frozen classifier for every ordered
/// visible microphone pair.
pub fn ngcc_features(
    store: &ParamStore<f32>,
    params: &NgccParams,
    scene: &Scene,
    mask: &MaskSpec,
) -> Result<TdoaFeatureMap, NgccError> {
    build_feature_map(scene, mask, params.config.tau, |a, b| {
        Ok(stable_softmax(&ngcc_logits(store, params, a, b)?))
    })
}

/// Plain whitened cross-correlations as features, the learning-free
/// counterpart of [`ngcc_features`] with the same shape and symmetry.
pub fn gcc_features(scene: &Scene, mask: &MaskSpec, tau: usize) -> Result<TdoaFeatureMap, NgccError> {
    build_feature_map(scene, mask, tau, |a, b| Ok(signal::gcc_phat(a, b, tau)?.values))
}

/// Knobs for [`pretrain_ngcc`].
#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub epochs: usize,
    /// Microphone pairs drawn per scene per epoch.
    pub pairs_per_scene: usize,
    /// Pairs accumulated into one optimizer step.
    pub batch_pairs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Trailing fraction of the scene list held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            epochs: 12,
            pairs_per_scene: 4,
            batch_pairs: 8,
            lr: 2e-3,
            weight_decay: 0.0,
            val_fraction: 0.2,
            seed: 7,
        }
    }
}

/// Per-epoch curves from a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// Mean cross-entropy per epoch over the training pairs.
    pub train_loss: Vec<f64>,
    /// Exact-argmax validation accuracy per epoch.
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    /// Pairs dropped because their true delay fell outside the range.
    pub skipped_pairs: usize,
}

/// A drawn training pair: scene-local microphone indices and the delay
/// class of microphone `j` relative to `i`.
fn draw_pair(
    scene: &Scene,
    tau: usize,
    rng: &mut impl Rng,
    skipped: &mut usize,
) -> Option<(usize, usize, usize)> {
    let m = scene.num_mics();
    if m < 2 {
        return None;
    }
    for _ in 0..8 {
        let i = rng.gen_range(0..m);
        let mut j = rng.gen_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let label = scene.tdoa_samples(i, j).round() as i64;
        if label.unsigned_abs() as usize <= tau {
            return Some((i, j, (label + tau as i64) as usize));
        }
        *skipped += 1;
    }
    None
}

fn snapshot_values<S: Scalar>(store: &ParamStore<S>) -> Vec<Tensor<S>> {
    store.iter().map(|(_, _, value)| value.clone()).collect()
}

fn restore_values<S: Scalar>(store: &mut ParamStore<S>, values: &[Tensor<S>]) {
    for (i, value) in values.iter().enumerate() {
        *store.get_mut(ParamId(i)) = value.clone();
    }
}

/// Trains the delay classifier with cross-entropy on random microphone
/// pairs and returns the parameters of the best validation epoch.
///
/// Scene order, pair choice, and initialization all derive from
/// `opts.seed`, so a rerun reproduces the same curves.
pub fn pretrain_ngcc(
    scenes: &[Scene],
    config: NgccConfig,
    opts: &PretrainOptions,
) -> Result<(ParamStore<f32>, NgccParams, PretrainReport), NgccError> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(NgccError::NoTrainingPairs);
    }
    let n_val = ((scenes.len() as f64 * opts.val_fraction).ceil() as usize)
        .clamp(1, scenes.len().saturating_sub(1).max(1));
    let split = scenes.len() - n_val.min(scenes.len() - 1);
    let (train, val) = if scenes.len() == 1 {
        (scenes, scenes)
    } else {
        (&scenes[..split], &scenes[split..])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::<f32>::new();
    let params = NgccParams::init(config, &mut store, &mut rng)?;
    let mut optim = AdamW::new(AdamWConfig {
        lr: opts.lr,
        weight_decay: opts.weight_decay,
        ..AdamWConfig::default()
    });

    let mut skipped = 0usize;
    let mut val_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    val_rng.set_stream(u64::MAX);
    let mut val_pairs: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (si, scene) in val.iter().enumerate() {
        for _ in 0..opts.pairs_per_scene.max(2) {
            if let Some((i, j, class)) = draw_pair(scene, config.tau, &mut val_rng, &mut skipped) {
                val_pairs.push((si, i, j, class));
            }
        }
    }
    if val_pairs.is_empty() {
        return Err(NgccError::NoTrainingPairs);
    }

    let mut report = PretrainReport {
        train_loss: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
        skipped_pairs: 0,
    };
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_values = snapshot_values(&store);

    for epoch in 0..opts.epochs {
        let mut erng = ChaCha8Rng::seed_from_u64(opts.seed);
        erng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut erng);

        let mut batch = Grads::<f32>::new();
        let mut in_batch = 0usize;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for &si in &order {
            let scene = &train[si];
            for _ in 0..opts.pairs_per_scene {
                let Some((i, j, class)) = draw_pair(scene, config.tau, &mut erng, &mut skipped)
                else {
                    continue;
                };
                let mut tape = Tape::<f32>::new();
                let logits =
                    ngcc_forward(&mut tape, &store, &params, &scene.received[i], &scene.received[j])?;
                let loss = tape.cross_entropy(logits, class);
                loss_sum += tape.value(loss).data()[0].to_f();
                loss_count += 1;
                batch.accumulate(&tape.backward(loss));
                in_batch += 1;
                if in_batch == opts.batch_pairs {
                    batch.scale(1.0 / in_batch as f32);
                    optim.step(&mut store, &batch);
                    batch = Grads::new();
                    in_batch = 0;
                }
            }
        }
        if in_batch > 0 {
            batch.scale(1.0 / in_batch as f32);
            optim.step(&mut store, &batch);
        }
        if loss_count == 0 {
            return Err(NgccError::NoTrainingPairs);
        }
        report.train_loss.push(loss_sum / loss_count as f64);

        let mut hits = 0usize;
        for &(si, i, j, class) in &val_pairs {
            let logits = ngcc_logits(&store, &params, &val[si].received[i], &val[si].received[j])?;
            let predicted = argmax_lag(&logits, config.tau) + config.tau as i64;
            if predicted as usize == class {
                hits += 1;
            }
        }
        let acc = hits as f64 / val_pairs.len() as f64;
        report.val_accuracy.push(acc);
        if acc > best_acc {
            best_acc = acc;
            report.best_epoch = epoch;
            best_values = snapshot_values(&store);
        }
    }

    restore_values(&mut store, &best_values);
    report.skipped_pairs = skipped;
    if skipped > 0 {
        eprintln!("pretrain: skipped {skipped} pairs with delays outside -{0}..={0}", config.tau);
    }
    Ok((store, params, report))
}

/// Paired accuracy of the frozen classifier and of the plain whitened
/// correlation argmax on the same randomly drawn microphone pairs.
#[derive(Debug, Clone, Copy)]
pub struct DelayBenchmark {
    pub pairs: usize,
    pub ngcc_exact: f64,
    pub ngcc_within_one: f64,
    pub gcc_exact: f64,
    pub gcc_within_one: f64,
}

pub fn delay_benchmark(
    store: &ParamStore<f32>,
    params: &NgccParams,
    scenes: &[Scene],
    pairs_per_scene: usize,
    seed: u64,
) -> Result<DelayBenchmark, NgccError> {
    let tau = params.config.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skipped = 0usize;
    let mut pairs = 0usize;
    let mut hits = [0usize; 4];
    for scene in scenes {
        for _ in 0..pairs_per_scene {
            let Some((i, j, class)) = draw_pair(scene, tau, &mut rng, &mut skipped) else {
                continue;
            };
            let truth = class as i64 - tau as i64;
            let logits = ngcc_logits(store, params, &scene.received[i], &scene.received[j])?;
            let ngcc_err = (argmax_lag(&logits, tau) - truth).abs();
            let gcc = signal::gcc_phat(&scene.received[i], &scene.received[j], tau)?;
            let gcc_err = (gcc.argmax_lag() - truth).abs();
            pairs += 1;
            hits[0] += usize::from(ngcc_err == 0);
            hits[1] += usize::from(ngcc_err <= 1);
            hits[2] += usize::from(gcc_err == 0);
            hits[3] += usize::from(gcc_err <= 1);
        }
    }
    if pairs == 0 {
        return Err(NgccError::NoTrainingPairs);
    }
    let f = |h: usize| h as f64 / pairs as f64;
    Ok(DelayBenchmark {
        pairs,
        ngcc_exact: f(hits[0]),
        ngcc_within_one: f(hits[1]),
        gcc_exact: f(hits[2]),
        gcc_within_one: f(hits[3]),
    })
}
