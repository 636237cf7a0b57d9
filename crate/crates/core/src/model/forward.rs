use std::collections::BTreeMap;

use super::config::{LossWeights, ModelConfig, Phase};
use super::params::{mlp_forward, transformer_stack, ModelParams, BN_EPS};
use super::{MaskSpec, ModelError};
use crate::autograd::{NodeId, ParamStore, Scalar, Tape, Tensor};
use crate::ngcc::TdoaFeatureMap;
use crate::room::Scene;

/// Model-ready view of one scene under a mask: only the visible frames
/// and coordinates, plus the targets the loss needs.
///
/// All frames are jointly rescaled by one shared constant, the peak
/// absolute sample across the visible frames, so level ratios between
/// microphones survive as a distance cue. Masked frames never
/// contribute to the constant; their content must not be able to reach
/// any output.
#[derive(Debug, Clone)]
pub struct SceneTokens {
    /// Number of microphones M; entities run from 0 (source) to M.
    pub num_mics: usize,
    /// Visible audio inputs by entity index (the source feed for 0,
    /// noisy capture for microphones), each of the model's token length.
    pub audio: BTreeMap<usize, Vec<f64>>,
    /// Reconstruction targets for the same entities: noise-free frames
    /// under the same scaling.
    pub clean: BTreeMap<usize, Vec<f64>>,
    /// Visible microphone coordinates in meters.
    pub coords: BTreeMap<usize, [f64; 3]>,
    /// Source position target in meters.
    pub source_pos: [f64; 3],
    /// All microphone positions, targets for masked-coordinate
    /// prediction.
    pub mic_pos: Vec<[f64; 3]>,
    /// The shared amplitude factor that was applied to every frame.
    pub scale: f64,
}

impl SceneTokens {
    pub fn from_scene(scene: &Scene, mask: &MaskSpec, n: usize) -> Result<SceneTokens, ModelError> {
        mask.validate(scene.num_mics())?;
        let mut audio = BTreeMap::new();
        let mut clean = BTreeMap::new();
        for &m in &mask.audio {
            let (input, target) = if m == 0 {
                (&scene.source.samples, &scene.source.samples)
            } else {
                (&scene.received[m - 1].samples, &scene.clean[m - 1].samples)
            };
            if input.len() != n {
                return Err(ModelError::FrameLength { have: input.len(), want: n });
            }
            if target.len() != n {
                return Err(ModelError::FrameLength { have: target.len(), want: n });
            }
            audio.insert(m, input.clone());
            clean.insert(m, target.clone());
        }
        let coords: BTreeMap<usize, [f64; 3]> =
            mask.coords.iter().map(|&m| (m, scene.mic_pos[m - 1])).collect();
        let peak = audio
            .values()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()));
        let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        for frame in audio.values_mut().chain(clean.values_mut()) {
            for x in frame.iter_mut() {
                *x *= scale;
            }
        }
        Ok(SceneTokens {
            num_mics: scene.num_mics(),
            audio,
            clean,
            coords,
            source_pos: scene.source_pos,
            mic_pos: scene.mic_pos.clone(),
            scale,
        })
    }

    /// Entity indices with visible audio, ascending.
    pub fn audio_order(&self) -> Vec<usize> {
        self.audio.keys().copied().collect()
    }

    /// Microphone indices (1-based) with visible audio, ascending.
    pub fn audio_mics(&self) -> Vec<usize> {
        self.audio.keys().copied().filter(|&m| m >= 1).collect()
    }
}

/// Node handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// Entity indices matching the rows of `recon`, ascending.
    pub audio_order: Vec<usize>,
    /// Reconstructed frames for the visible-audio entities, one row per
    /// entry of `audio_order`.
    pub recon: NodeId,
    /// Predicted source position, shape `[3]`.
    pub source_pred: NodeId,
    /// Predicted microphone positions, row `m - 1` for microphone `m`.
    pub mic_preds: NodeId,
    /// Global audio summary: elementwise max over encoder outputs.
    pub z: NodeId,
    /// Pooled pairwise delay feature, when enabled.
    pub q: Option<NodeId>,
    /// The batch-normalization node inside the coordinate embedding;
    /// training passes read its batch statistics back for the running
    /// estimates.
    pub coord_bn: NodeId,
    /// Encoder output matrix, one row per visible token.
    pub encoded: NodeId,
    /// Decoder output matrix, `2 (M + 1)` rows.
    pub decoded: NodeId,
}

fn const_matrix<S: Scalar>(tape: &mut Tape<S>, rows: usize, cols: usize, data: &[f64]) -> NodeId {
    debug_assert_eq!(rows * cols, data.len());
    let data = data.iter().map(|&x| S::from_f(x)).collect();
    tape.constant(Tensor::matrix(rows, cols, data))
}

fn const_vector<S: Scalar>(tape: &mut Tape<S>, data: &[f64]) -> NodeId {
    let data = data.iter().map(|&x| S::from_f(x)).collect();
    tape.constant(Tensor::vector(data))
}

/// Runs the full autoencoder on one scene view.
///
/// The token set seen by the encoder holds only the visible inputs.
/// The decoder always works on the complete grid of `2 (M + 1)` tokens,
/// with mask tokens standing in for everything hidden.
pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &ModelParams,
    inputs: &SceneTokens,
    features: Option<&TdoaFeatureMap>,
    phase: Phase,
) -> Result<ForwardOutput, ModelError> {
    let config: &ModelConfig = &params.config;
    let m_count = inputs.num_mics;
    let audio_order = inputs.audio_order();
    let k_audio = audio_order.len();
    let k_coord = inputs.coords.len();
    for frame in inputs.audio.values() {
        if frame.len() != config.n {
            return Err(ModelError::FrameLength { have: frame.len(), want: config.n });
        }
    }
    let features = if config.use_tdoa {
        let f = features.ok_or(ModelError::FeatureMismatch("delay features required"))?;
        if f.tau() != config.tau {
            return Err(ModelError::FeatureMismatch("feature lag window does not match"));
        }
        Some(f)
    } else {
        None
    };

    let audio_flat: Vec<f64> =
        audio_order.iter().flat_map(|m| inputs.audio[m].iter().copied()).collect();
    let audio_in = const_matrix(tape, k_audio, config.n, &audio_flat);
    let w_enc = tape.param(store, params.w_enc);
    let v_enc_audio = tape.param(store, params.v_enc_audio);
    let projected = tape.matmul_nt(audio_in, w_enc);
    let audio_tokens = tape.add_bias(projected, v_enc_audio);

    let coord_flat: Vec<f64> = inputs.coords.values().flat_map(|p| p.iter().copied()).collect();
    let coord_in = const_matrix(tape, k_coord, 3, &coord_flat);
    let cw1 = tape.param(store, params.coord_w1);
    let cb1 = tape.param(store, params.coord_b1);
    let bn_gamma = tape.param(store, params.coord_bn_gamma);
    let bn_beta = tape.param(store, params.coord_bn_beta);
    let hidden = tape.linear(coord_in, cw1, cb1);
    let coord_bn = match phase {
        Phase::Train => tape.batch_norm_train(hidden, bn_gamma, bn_beta, BN_EPS),
        Phase::Eval => {
            let mean = store.get(params.coord_bn_mean);
            let var = store.get(params.coord_bn_var);
            tape.batch_norm_eval(hidden, bn_gamma, bn_beta, mean, var, BN_EPS)
        }
    };
    let activated = tape.gelu(coord_bn);
    let cw2 = tape.param(store, params.coord_w2);
    let cb2 = tape.param(store, params.coord_b2);
    let embedded = tape.linear(activated, cw2, cb2);
    let v_enc_coord = tape.param(store, params.v_enc_coord);
    let coord_tokens = tape.add_bias(embedded, v_enc_coord);

    let mut enc_rows = Vec::with_capacity(k_audio + k_coord);
    for i in 0..k_audio {
        enc_rows.push(tape.row(audio_tokens, i));
    }
    for i in 0..k_coord {
        enc_rows.push(tape.row(coord_tokens, i));
    }
    let enc_in = tape.stack_rows(&enc_rows);
    let encoded = transformer_stack(tape, store, &params.encoder, config.heads, enc_in);
    let z = tape.max_over_rows(encoded);

    let audio_row: BTreeMap<usize, usize> =
        audio_order.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let coord_row: BTreeMap<usize, usize> =
        inputs.coords.keys().enumerate().map(|(i, &m)| (m, k_audio + i)).collect();
    let u_audio = tape.param(store, params.u_audio);
    let u_coord = tape.param(store, params.u_coord);
    let u_source = tape.param(store, params.u_source);
    let mut t_audio = Vec::with_capacity(m_count + 1);
    let mut t_coord = Vec::with_capacity(m_count + 1);
    for m in 0..=m_count {
        t_audio.push(match audio_row.get(&m) {
            Some(&i) => tape.row(encoded, i),
            None => u_audio,
        });
        t_coord.push(match (m, coord_row.get(&m)) {
            (_, Some(&i)) => tape.row(encoded, i),
            (0, None) => u_source,
            (_, None) => u_coord,
        });
    }
    let t_audio = tape.stack_rows(&t_audio);
    let t_coord = tape.stack_rows(&t_coord);
    let msg_c2a = mlp_forward(tape, store, &params.gamma_c2a, t_coord);
    let msg_a2c = mlp_forward(tape, store, &params.gamma_a2c, t_audio);
    let v_dec_audio = tape.param(store, params.v_dec_audio);
    let v_dec_coord = tape.param(store, params.v_dec_coord);
    let y_audio = tape.add_bias(t_audio, v_dec_audio);
    let y_audio = tape.add(y_audio, msg_c2a);
    let y_coord = tape.add_bias(t_coord, v_dec_coord);
    let y_coord = tape.add(y_coord, msg_a2c);

    let mut dec_rows = Vec::with_capacity(2 * (m_count + 1));
    for i in 0..=m_count {
        dec_rows.push(tape.row(y_audio, i));
    }
    for i in 0..=m_count {
        dec_rows.push(tape.row(y_coord, i));
    }
    let dec_in = tape.stack_rows(&dec_rows);
    let decoded = transformer_stack(tape, store, &params.decoder, config.heads, dec_in);

    let recon_rows: Vec<NodeId> =
        audio_order.iter().map(|&m| tape.row(decoded, m)).collect();
    let recon_tokens = tape.stack_rows(&recon_rows);
    let w_dec = tape.param(store, params.w_dec);
    let recon = tape.matmul_nt(recon_tokens, w_dec);

    let mut coord_out: BTreeMap<usize, NodeId> = BTreeMap::new();
    let mut decoded_coord = |tape: &mut Tape<S>, m: usize| {
        *coord_out.entry(m).or_insert_with(|| tape.row(decoded, m_count + 1 + m))
    };

    let q = match features {
        Some(map) => {
            let mics = inputs.audio_mics();
            if mics.len() < 2 {
                return Err(ModelError::TooFewAudio(mics.len()));
            }
            let phi = params.phi.as_ref().expect("delay head present when features are enabled");
            let mut pair_rows = Vec::with_capacity(mics.len() * (mics.len() - 1));
            for &i in &mics {
                for &j in &mics {
                    if i == j {
                        continue;
                    }
                    let feat = map
                        .get(i, j)
                        .ok_or(ModelError::FeatureMismatch("missing microphone pair"))?;
                    let feat = const_vector(tape, feat);
                    let yi = decoded_coord(tape, i);
                    let yj = decoded_coord(tape, j);
                    pair_rows.push(tape.concat_vec(&[feat, yi, yj]));
                }
            }
            let pairs = tape.stack_rows(&pair_rows);
            let pair_embed = mlp_forward(tape, store, phi, pairs);
            Some(tape.max_over_rows(pair_embed))
        }
        None => None,
    };

    let head_input = |tape: &mut Tape<S>, token: NodeId| match q {
        Some(q) => tape.concat_vec(&[token, z, q]),
        None => tape.concat_vec(&[token, z]),
    };
    let y0 = decoded_coord(tape, 0);
    let source_in = head_input(tape, y0);
    let source_in = tape.stack_rows(&[source_in]);
    let source_out = mlp_forward(tape, store, &params.psi_source, source_in);
    let source_pred = tape.row(source_out, 0);

    let mut mic_rows = Vec::with_capacity(m_count);
    for m in 1..=m_count {
        let ym = decoded_coord(tape, m);
        mic_rows.push(head_input(tape, ym));
    }
    let mic_in = tape.stack_rows(&mic_rows);
    let mic_preds = mlp_forward(tape, store, &params.psi_mic, mic_in);

    Ok(ForwardOutput {
        audio_order,
        recon,
        source_pred,
        mic_preds,
        z,
        q,
        coord_bn,
        encoded,
        decoded,
    })
}

/// Training objective over one scene: mean squared reconstruction error
/// on the visible frames, squared source position error, and mean
/// squared position error over the hidden microphones. The last term
/// vanishes when every microphone coordinate is visible.
pub fn loss<S: Scalar>(
    tape: &mut Tape<S>,
    out: &ForwardOutput,
    inputs: &SceneTokens,
    weights: &LossWeights,
) -> NodeId {
    let n = inputs.clean.values().next().map_or(0, |f| f.len());
    let k_audio = out.audio_order.len();
    let target_flat: Vec<f64> =
        out.audio_order.iter().flat_map(|m| inputs.clean[m].iter().copied()).collect();
    let targets = const_matrix(tape, k_audio, n, &target_flat);
    let audio_diff = tape.sub(out.recon, targets);
    let audio_sq = tape.sum_sq(audio_diff);
    let audio_term = tape.scale(audio_sq, weights.lambda_audio / k_audio as f64);

    let source_target = const_vector(tape, &inputs.source_pos);
    let source_diff = tape.sub(out.source_pred, source_target);
    let source_sq = tape.sum_sq(source_diff);
    let source_term = tape.scale(source_sq, weights.lambda_source);

    let mut total = tape.add(audio_term, source_term);
    let hidden: Vec<usize> =
        (1..=inputs.num_mics).filter(|m| !inputs.coords.contains_key(m)).collect();
    if !hidden.is_empty() {
        let rows: Vec<NodeId> = hidden.iter().map(|&m| tape.row(out.mic_preds, m - 1)).collect();
        let preds = tape.stack_rows(&rows);
        let target_flat: Vec<f64> =
            hidden.iter().flat_map(|&m| inputs.mic_pos[m - 1].iter().copied()).collect();
        let targets = const_matrix(tape, hidden.len(), 3, &target_flat);
        let diff = tape.sub(preds, targets);
        let sq = tape.sum_sq(diff);
        let mic_term = tape.scale(sq, weights.lambda_mic / hidden.len() as f64);
        total = tape.add(total, mic_term);
    }
    total
}

/// Plain-value predictions pulled out of a finished forward pass.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub source: [f64; 3],
    /// Row `m - 1` for microphone `m`.
    pub mics: Vec<[f64; 3]>,
    /// Reconstructed frames in the scaled domain, keyed by entity.
    pub recon: BTreeMap<usize, Vec<f64>>,
}

pub fn extract_predictions<S: Scalar>(tape: &Tape<S>, out: &ForwardOutput) -> Predictions {
    let triple = |slice: &[S]| [slice[0].to_f(), slice[1].to_f(), slice[2].to_f()];
    let source = triple(tape.value(out.source_pred).data());
    let mic_vals = tape.value(out.mic_preds);
    let mics = (0..mic_vals.rows()).map(|i| triple(mic_vals.row_slice(i))).collect();
    let recon_vals = tape.value(out.recon);
    let recon = out
        .audio_order
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, recon_vals.row_slice(i).iter().map(|x| x.to_f()).collect()))
        .collect();
    Predictions { source, mics, recon }
}
