use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autograd::{check_gradients, entries_of, load_tensors, save_tensors};
use crate::autograd::{AdamW, AdamWConfig, Grads, ParamStore, Tape, Tensor};
use crate::ngcc::{gcc_features, TdoaFeatureMap};
use crate::room::{render_scene, Room};

fn tiny_config() -> ModelConfig {
    ModelConfig { d: 16, depth: 1, n: 64, heads: 4, tau: 8, max_mics: 11, use_tdoa: true }
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    let x: f64 = rng.sample(StandardNormal);
    x
}

fn random_frame(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| 0.25 * randn(rng)).collect()
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.2..3.8), rng.gen_range(0.2..4.8), rng.gen_range(0.2..2.3)]
}

/// Fabricates a scene view directly, bypassing the renderer; clean
/// targets equal the inputs.
fn synthetic_tokens(m_count: usize, mask: &MaskSpec, n: usize, rng: &mut ChaCha8Rng) -> SceneTokens {
    let mic_pos: Vec<[f64; 3]> = (0..m_count).map(|_| random_point(rng)).collect();
    let audio: BTreeMap<usize, Vec<f64>> =
        mask.audio.iter().map(|&m| (m, random_frame(n, rng))).collect();
    let coords = mask.coords.iter().map(|&m| (m, mic_pos[m - 1])).collect();
    SceneTokens {
        num_mics: m_count,
        clean: audio.clone(),
        audio,
        coords,
        source_pos: random_point(rng),
        mic_pos,
        scale: 1.0,
    }
}

fn synthetic_features(tokens: &SceneTokens, tau: usize, rng: &mut ChaCha8Rng) -> TdoaFeatureMap {
    let mics = tokens.audio_mics();
    let mut entries = BTreeMap::new();
    for &i in &mics {
        for &j in &mics {
            if i != j {
                entries.insert((i, j), (0..2 * tau + 1).map(|_| rng.gen_range(0.0..1.0)).collect());
            }
        }
    }
    TdoaFeatureMap::from_entries(tau, entries).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn config_validation_rejects_each_bad_field() {
    assert!(ModelConfig::default().validate().is_ok());
    assert!(ModelConfig::desk().validate().is_ok());
    let bad = [
        ModelConfig { d: 0, ..ModelConfig::desk() },
        ModelConfig { d: 65, ..ModelConfig::desk() },
        ModelConfig { heads: 0, ..ModelConfig::desk() },
        ModelConfig { n: 0, ..ModelConfig::desk() },
        ModelConfig { depth: 0, ..ModelConfig::desk() },
        ModelConfig { tau: 0, ..ModelConfig::desk() },
        ModelConfig { max_mics: 4, ..ModelConfig::desk() },
    ];
    for config in bad {
        assert!(matches!(config.validate(), Err(ModelError::InvalidConfig(_))), "{config:?}");
    }
    assert!(LossWeights::default().validate().is_ok());
    let bad = LossWeights { lambda_audio: -0.1, ..LossWeights::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn initialization_draws_small_gaussians_and_unit_buffers() {
    let config = ModelConfig { d: 32, n: 128, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    let w = store.get(params.w_enc);
    let mean: f64 = w.data().iter().sum::<f64>() / w.len() as f64;
    let std: f64 =
        (w.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64).sqrt();
    assert!(mean.abs() < 3e-3, "mean {mean}");
    assert!((std - INIT_STD).abs() < 3e-3, "std {std}");
    assert!(store.get(params.coord_bn_mean).data().iter().all(|&x| x == 0.0));
    assert!(store.get(params.coord_bn_var).data().iter().all(|&x| x == 1.0));
    assert_eq!(store.get(params.phi.unwrap().w1).shape(), &[config.pair_feature_width(), 32]);
    assert_eq!(store.get(params.psi_source.w1).shape(), &[3 * 32, 32]);

    let blind = ModelConfig { use_tdoa: false, ..config };
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &blind, &mut rng).unwrap();
    assert!(params.phi.is_none());
    assert!(store.id_of("model.phi.w1").is_none());
    assert_eq!(store.get(params.psi_source.w1).shape(), &[2 * 32, 32]);
}

#[test]
fn token_counts_match_the_masking() {
    let config = ModelConfig { max_mics: 11, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let mask = MaskSpec::full(11);
    let tokens = synthetic_tokens(11, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
    assert_eq!(tape.value(out.encoded).rows(), 22);
    assert_eq!(tape.value(out.decoded).rows(), 24);
    assert_eq!(tape.value(out.recon).rows(), 11);
    assert_eq!(tape.value(out.recon).cols(), config.n);
    assert_eq!(tape.value(out.mic_preds).rows(), 11);
    assert_eq!(tape.value(out.mic_preds).cols(), 3);
    assert_eq!(tape.value(out.source_pred).len(), 3);
    assert_eq!(tape.value(out.z).len(), config.d);
    assert_eq!(tape.value(out.q.unwrap()).len(), config.d);

    let mask = MaskSpec::for_setup(Setup::OneB, 11, 11).unwrap();
    let tokens = synthetic_tokens(11, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
    assert_eq!(tape.value(out.encoded).rows(), 23);
    assert_eq!(tape.value(out.decoded).rows(), 24);
    assert_eq!(tape.value(out.recon).rows(), 12);
}

#[test]
fn empty_transformer_stack_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let config = ModelConfig { depth: 0, ..tiny_config() };
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    assert!(params.encoder.is_empty());
    let mut tape = Tape::new();
    let data: Vec<f64> = (0..32).map(|_| randn(&mut rng)).collect();
    let x = tape.constant(Tensor::matrix(2, 16, data.clone()));
    let y = transformer_stack(&mut tape, &store, &params.encoder, config.heads, x);
    assert_eq!(x, y);
    assert_eq!(tape.value(y).data(), data.as_slice());
}

#[test]
fn depth_zero_encoder_exposes_the_raw_embeddings() {
    let config = ModelConfig { depth: 0, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let mask = MaskSpec::full(5);
    let mut tokens = synthetic_tokens(5, &mask, config.n, &mut rng);
    tokens.audio.insert(2, vec![0.0; config.n]);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();

    let encoded = tape.value(out.encoded);
    let v_enc_audio = store.get(params.v_enc_audio);
    let zero_row = encoded.row_slice(1);
    assert_eq!(zero_row, v_enc_audio.data(), "a zero frame projects to exactly the modality vector");
    let nonzero_row = encoded.row_slice(0);
    assert_ne!(nonzero_row, v_enc_audio.data());
}

#[test]
fn decoder_assembly_places_mask_tokens_and_messages() {
    let config = ModelConfig { depth: 0, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let m_count = 5;
    let mask = MaskSpec::full(m_count);
    let tokens = synthetic_tokens(m_count, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();

    let d = config.d;
    let encoded = tape.value(out.encoded).clone();
    let decoded = tape.value(out.decoded).clone();
    let one_row_mlp = |mlp: &MlpParams, input: &[f64]| -> Vec<f64> {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::matrix(1, d, input.to_vec()));
        let y = mlp_forward(&mut t, &store, mlp, x);
        t.value(y).data().to_vec()
    };

    let u_audio = store.get(params.u_audio).data();
    let u_source = store.get(params.u_source).data();
    let v_dec_coord = store.get(params.v_dec_coord).data();
    let v_dec_audio = store.get(params.v_dec_audio).data();
    let msg = one_row_mlp(&params.gamma_a2c, u_audio);
    let expected: Vec<f64> = (0..d).map(|k| u_source[k] + v_dec_coord[k] + msg[k]).collect();
    let y0_coord = decoded.row_slice(m_count + 1);
    assert!(
        max_abs_diff(y0_coord, &expected) < 1e-12,
        "hidden source slot combines its two mask tokens and the audio message"
    );

    let audio_row = encoded.row_slice(2);
    let coord_row = encoded.row_slice(m_count + 2);
    let msg = one_row_mlp(&params.gamma_c2a, coord_row);
    let expected: Vec<f64> = (0..d).map(|k| audio_row[k] + v_dec_audio[k] + msg[k]).collect();
    assert!(
        max_abs_diff(decoded.row_slice(3), &expected) < 1e-12,
        "a visible microphone keeps its encoder outputs plus the coordinate message"
    );
}

#[test]
fn global_pool_matches_a_brute_force_max() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    let mask = MaskSpec::full(6);
    let tokens = synthetic_tokens(6, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
    let encoded = tape.value(out.encoded);
    let z = tape.value(out.z).data();
    assert_eq!(z.len(), config.d);
    for (k, &zk) in z.iter().enumerate() {
        let brute =
            (0..encoded.rows()).map(|i| encoded.row_slice(i)[k]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(zk, brute);
    }
}

#[test]
fn pooled_pair_feature_matches_a_hand_computation() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let mask = MaskSpec {
        audio: [1, 2].into_iter().collect(),
        coords: (1..=5).collect(),
        setup: None,
    };
    let tokens = synthetic_tokens(5, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();

    let decoded = tape.value(out.decoded).clone();
    let width = config.pair_feature_width();
    let mut pair_inputs = Vec::new();
    for (i, j) in [(1usize, 2usize), (2, 1)] {
        let mut row = features.get(i, j).unwrap().to_vec();
        row.extend_from_slice(decoded.row_slice(6 + i));
        row.extend_from_slice(decoded.row_slice(6 + j));
        pair_inputs.extend(row);
    }
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::matrix(2, width, pair_inputs));
    let embedded = mlp_forward(&mut t, &store, params.phi.as_ref().unwrap(), x);
    let brute: Vec<f64> = (0..config.d)
        .map(|k| t.value(embedded).at(0, k).max(t.value(embedded).at(1, k)))
        .collect();
    let q = tape.value(out.q.unwrap()).data();
    assert!(max_abs_diff(q, &brute) < 1e-12, "two visible frames give exactly two ordered pairs");
}

#[test]
fn forward_rejects_missing_or_mismatched_features() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    let mask = MaskSpec::full(5);
    let tokens = synthetic_tokens(5, &mask, config.n, &mut rng);

    let mut tape = Tape::new();
    let err = forward(&mut tape, &store, &params, &tokens, None, Phase::Eval).unwrap_err();
    assert!(matches!(err, ModelError::FeatureMismatch(_)));

    let wrong_tau = synthetic_features(&tokens, config.tau + 1, &mut rng);
    let mut tape = Tape::new();
    let err =
        forward(&mut tape, &store, &params, &tokens, Some(&wrong_tau), Phase::Eval).unwrap_err();
    assert!(matches!(err, ModelError::FeatureMismatch(_)));

    let full = synthetic_features(&tokens, config.tau, &mut rng);
    let mut partial: BTreeMap<(usize, usize), Vec<f64>> =
        full.pairs().map(|(k, v)| (k, v.to_vec())).collect();
    partial.remove(&(2, 3));
    let partial = TdoaFeatureMap::from_entries(config.tau, partial).unwrap();
    let mut tape = Tape::new();
    let err =
        forward(&mut tape, &store, &params, &tokens, Some(&partial), Phase::Eval).unwrap_err();
    assert!(matches!(err, ModelError::FeatureMismatch(_)));

    let mut lonely = tokens.clone();
    lonely.audio = [(1, lonely.audio[&1].clone())].into_iter().collect();
    let features = synthetic_features(&lonely, config.tau, &mut rng);
    let mut tape = Tape::new();
    let err =
        forward(&mut tape, &store, &params, &lonely, Some(&features), Phase::Eval).unwrap_err();
    assert!(matches!(err, ModelError::TooFewAudio(1)));

    let blind = ModelConfig { use_tdoa: false, ..config };
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &blind, &mut rng).unwrap();
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, None, Phase::Eval).unwrap();
    assert!(out.q.is_none());
}

/// A mask where every hidden slot exists at once: the source audio is
/// visible, microphone 7's audio is hidden, microphone 6's coordinates
/// are hidden.
fn coverage_mask() -> MaskSpec {
    MaskSpec {
        audio: (0..=6).collect(),
        coords: [1, 2, 3, 4, 5, 7].into_iter().collect(),
        setup: None,
    }
}

#[test]
fn source_prediction_ignores_microphone_order() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let mask = coverage_mask();
    mask.validate(7).unwrap();
    let tokens = synthetic_tokens(7, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
    let base = extract_predictions(&tape, &out);

    let perm = [3usize, 1, 7, 2, 6, 4, 5];
    let p = |m: usize| if m == 0 { 0 } else { perm[m - 1] };
    let mut mic_pos = vec![[0.0; 3]; 7];
    for m in 1..=7 {
        mic_pos[p(m) - 1] = tokens.mic_pos[m - 1];
    }
    let permuted = SceneTokens {
        num_mics: 7,
        audio: tokens.audio.iter().map(|(&m, f)| (p(m), f.clone())).collect(),
        clean: tokens.clean.iter().map(|(&m, f)| (p(m), f.clone())).collect(),
        coords: tokens.coords.iter().map(|(&m, c)| (p(m), *c)).collect(),
        source_pos: tokens.source_pos,
        mic_pos,
        scale: tokens.scale,
    };
    let entries: BTreeMap<(usize, usize), Vec<f64>> =
        features.pairs().map(|((i, j), v)| ((p(i), p(j)), v.to_vec())).collect();
    let permuted_features = TdoaFeatureMap::from_entries(config.tau, entries).unwrap();
    let mut tape = Tape::new();
    let out =
        forward(&mut tape, &store, &params, &permuted, Some(&permuted_features), Phase::Eval)
            .unwrap();
    let shuffled = extract_predictions(&tape, &out);

    assert!(
        max_abs_diff(&base.source, &shuffled.source) <= 1e-5,
        "source prediction moved: {:?} vs {:?}",
        base.source,
        shuffled.source
    );
    for m in 1..=7 {
        assert!(
            max_abs_diff(&base.mics[m - 1], &shuffled.mics[p(m) - 1]) <= 1e-5,
            "microphone {m} prediction did not follow the relabeling"
        );
    }
    for (&m, frame) in &base.recon {
        assert!(max_abs_diff(frame, &shuffled.recon[&p(m)]) <= 1e-5);
    }
}

#[test]
fn hidden_inputs_never_leak_into_outputs() {
    let config = ModelConfig { n: 256, tau: 12, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut store = ParamStore::<f32>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let room = Room::new([4.0, 5.0, 2.5], 0.0).unwrap();
    let mics: Vec<[f64; 3]> = (0..7).map(|_| random_point(&mut rng)).collect();
    let source_pos = random_point(&mut rng);
    let signal: Vec<f64> = (0..4096).map(|_| randn(&mut rng)).collect();
    let mut scene = render_scene(
        &room,
        source_pos,
        &mics,
        &signal,
        config.n,
        f64::INFINITY,
        &mut rng,
    )
    .unwrap();

    let mask = coverage_mask();
    let run = |scene: &crate::room::Scene| {
        let tokens = SceneTokens::from_scene(scene, &mask, config.n).unwrap();
        let features = gcc_features(scene, &mask, config.tau).unwrap();
        let mut tape = Tape::new();
        let out =
            forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
        let grab = |id| tape.value(id).data().iter().map(|x: &f32| x.to_bits()).collect::<Vec<_>>();
        (grab(out.source_pred), grab(out.mic_preds), grab(out.recon), grab(out.q.unwrap()))
    };
    let before = run(&scene);

    for x in scene.received[6].samples.iter_mut() {
        *x = 77.0;
    }
    for x in scene.clean[6].samples.iter_mut() {
        *x = -3.0;
    }
    let after = run(&scene);
    assert_eq!(before, after, "content behind the mask reached an output");
}

#[test]
fn loss_closed_forms_and_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let n = 16;
    let mask = coverage_mask();
    let tokens = synthetic_tokens(7, &mask, n, &mut rng);
    let weights = LossWeights::default();

    let fake_output = |tape: &mut Tape<f64>, source: [f64; 3], jitter: f64, rng: &mut ChaCha8Rng| {
        let order = tokens.audio_order();
        let mut recon_flat = Vec::new();
        for m in &order {
            for &x in &tokens.clean[m] {
                recon_flat.push(x + jitter * randn(rng));
            }
        }
        let mut mic_flat = Vec::new();
        for p in &tokens.mic_pos {
            for &x in p {
                mic_flat.push(x + jitter * randn(rng));
            }
        }
        ForwardOutput {
            audio_order: order.clone(),
            recon: tape.constant(Tensor::matrix(order.len(), n, recon_flat)),
            source_pred: tape.constant(Tensor::vector(source.to_vec())),
            mic_preds: tape.constant(Tensor::matrix(7, 3, mic_flat)),
            z: tape.constant(Tensor::vector(vec![0.0])),
            q: None,
            coord_bn: tape.constant(Tensor::vector(vec![0.0])),
            encoded: tape.constant(Tensor::vector(vec![0.0])),
            decoded: tape.constant(Tensor::vector(vec![0.0])),
        }
    };

    let mut tape = Tape::new();
    let out = fake_output(&mut tape, tokens.source_pos, 0.0, &mut rng);
    let l = loss(&mut tape, &out, &tokens, &weights);
    assert_eq!(tape.value(l).data()[0], 0.0, "perfect predictions cost nothing");

    let mut tape = Tape::new();
    let off = [tokens.source_pos[0] + 1.0, tokens.source_pos[1], tokens.source_pos[2]];
    let out = fake_output(&mut tape, off, 0.0, &mut rng);
    let l = loss(&mut tape, &out, &tokens, &weights);
    assert!((tape.value(l).data()[0] - 1.0).abs() < 1e-12, "a 1 m x-offset costs exactly 1.0");

    let mut tape = Tape::new();
    let out = fake_output(&mut tape, random_point(&mut rng), 0.3, &mut rng);
    let l = loss(&mut tape, &out, &tokens, &weights);
    let got = tape.value(l).data()[0];

    let recon = tape.value(out.recon).clone();
    let source = tape.value(out.source_pred).clone();
    let mics = tape.value(out.mic_preds).clone();
    let mut expected = 0.0;
    let order = tokens.audio_order();
    for (i, m) in order.iter().enumerate() {
        for (k, &target) in tokens.clean[m].iter().enumerate() {
            let diff = recon.at(i, k) - target;
            expected += weights.lambda_audio / order.len() as f64 * diff * diff;
        }
    }
    for k in 0..3 {
        let diff = source.data()[k] - tokens.source_pos[k];
        expected += weights.lambda_source * diff * diff;
    }
    let hidden: Vec<usize> = (1..=7).filter(|m| !tokens.coords.contains_key(m)).collect();
    assert_eq!(hidden, vec![6]);
    for &m in &hidden {
        for k in 0..3 {
            let diff = mics.at(m - 1, k) - tokens.mic_pos[m - 1][k];
            expected += weights.lambda_mic / hidden.len() as f64 * diff * diff;
        }
    }
    assert!((got - expected).abs() < 1e-6, "{got} vs oracle {expected}");

    let full = MaskSpec::full(7);
    let full_tokens = synthetic_tokens(7, &full, n, &mut rng);
    let mut tape = Tape::new();
    let order = full_tokens.audio_order();
    let out = ForwardOutput {
        audio_order: order.clone(),
        recon: {
            let flat: Vec<f64> =
                order.iter().flat_map(|m| full_tokens.clean[m].iter().copied()).collect();
            tape.constant(Tensor::matrix(order.len(), n, flat))
        },
        source_pred: tape.constant(Tensor::vector(full_tokens.source_pos.to_vec())),
        mic_preds: tape.constant(Tensor::matrix(7, 3, vec![9.0; 21])),
        z: tape.constant(Tensor::vector(vec![0.0])),
        q: None,
        coord_bn: tape.constant(Tensor::vector(vec![0.0])),
        encoded: tape.constant(Tensor::vector(vec![0.0])),
        decoded: tape.constant(Tensor::vector(vec![0.0])),
    };
    let l = loss(&mut tape, &out, &full_tokens, &weights);
    assert_eq!(
        tape.value(l).data()[0],
        0.0,
        "with every coordinate visible the microphone term vanishes"
    );
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let config = ModelConfig { max_mics: 5, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    let mask = MaskSpec {
        audio: (0..=5).collect(),
        coords: (1..=5).collect(),
        setup: None,
    };
    let tokens = synthetic_tokens(5, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let weights = LossWeights::default();

    let report = check_gradients(
        &mut store,
        |tape, store| {
            let out =
                forward(tape, store, &params, &tokens, Some(&features), Phase::Train).unwrap();
            loss(tape, &out, &tokens, &weights)
        },
        1e-5,
    );
    assert!(
        report.max_rel_err < 1e-3,
        "worst {} at {}[{}] over {} elements",
        report.max_rel_err,
        report.worst_param,
        report.worst_index,
        report.checked
    );
}

#[test]
fn gradients_flow_through_every_mask_token_path() {
    let config = ModelConfig { max_mics: 7, ..tiny_config() };
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    let mask = coverage_mask();
    let tokens = synthetic_tokens(7, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let weights = LossWeights::default();

    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Train).unwrap();
    let l = loss(&mut tape, &out, &tokens, &weights);
    let grads = tape.backward(l);
    for (id, name) in [
        (params.u_audio, "audio mask token"),
        (params.u_coord, "coordinate mask token"),
        (params.u_source, "source mask token"),
        (params.psi_mic.w1, "microphone head"),
        (params.phi.unwrap().w1, "pair feature head"),
    ] {
        let g = grads.get(id).expect(name);
        assert!(g.data().iter().any(|&x| x != 0.0), "{name} received no gradient");
    }

    let report = check_gradients(
        &mut store,
        |tape, store| {
            let out =
                forward(tape, store, &params, &tokens, Some(&features), Phase::Train).unwrap();
            loss(tape, &out, &tokens, &weights)
        },
        1e-5,
    );
    assert!(
        report.max_rel_err < 1e-3,
        "worst {} at {}[{}] over {} elements",
        report.max_rel_err,
        report.worst_param,
        report.worst_index,
        report.checked
    );
}

#[test]
fn running_statistics_follow_the_batch() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut store = ParamStore::<f64>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    let mask = MaskSpec::full(5);
    let tokens = synthetic_tokens(5, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Train).unwrap();
    let (mean, var) = tape.batch_stats(out.coord_bn).expect("training pass records stats");
    let (mean, var) = (mean.clone(), var.clone());
    update_bn_stats(&mut store, &params, &tape, out.coord_bn);
    let k = 5.0;
    for j in 0..config.d {
        let want = BN_MOMENTUM * mean.data()[j];
        assert!((store.get(params.coord_bn_mean).data()[j] - want).abs() < 1e-12);
        let want = (1.0 - BN_MOMENTUM) + BN_MOMENTUM * var.data()[j] * k / (k - 1.0);
        assert!((store.get(params.coord_bn_var).data()[j] - want).abs() < 1e-12);
    }

    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
    assert!(tape.batch_stats(out.coord_bn).is_none(), "inference keeps the stored statistics");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    let mut store = ParamStore::<f32>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();
    for x in store.get_mut(params.coord_bn_mean).data_mut() {
        *x = 0.25;
    }
    let mask = MaskSpec::full(6);
    let tokens = synthetic_tokens(6, &mask, config.n, &mut rng);
    let features = synthetic_features(&tokens, config.tau, &mut rng);
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &params, &tokens, Some(&features), Phase::Eval).unwrap();
    let want: Vec<u32> = tape.value(out.source_pred).data().iter().map(|x| x.to_bits()).collect();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tns");
    save_tensors(&path, &entries_of(&store)).unwrap();

    let mut other = ParamStore::<f32>::new();
    let mut other_rng = ChaCha8Rng::seed_from_u64(999);
    let reparams = ModelParams::init(&mut other, &config, &mut other_rng).unwrap();
    other.load_values(&load_tensors(&path).unwrap()).unwrap();
    let rebound = ModelParams::from_store(&other, &config).unwrap();
    assert_eq!(rebound.w_enc, reparams.w_enc);
    assert_eq!(other.get(rebound.coord_bn_mean).data()[0], 0.25);

    let mut tape = Tape::new();
    let out = forward(&mut tape, &other, &rebound, &tokens, Some(&features), Phase::Eval).unwrap();
    let got: Vec<u32> = tape.value(out.source_pred).data().iter().map(|x| x.to_bits()).collect();
    assert_eq!(want, got, "loaded model diverged from the saved one");

    let wrong = ModelConfig { d: 32, ..config };
    assert!(matches!(
        ModelParams::from_store(&other, &wrong),
        Err(ModelError::ParamShape(_) | ModelError::MissingParam(_))
    ));
}

#[test]
fn scene_view_scales_only_the_visible_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(83);
    let n = 128;
    let room = Room::new([4.0, 5.0, 2.5], 0.0).unwrap();
    let mics: Vec<[f64; 3]> = (0..7).map(|_| random_point(&mut rng)).collect();
    let signal: Vec<f64> = (0..2048).map(|_| randn(&mut rng)).collect();
    let mut scene =
        render_scene(&room, random_point(&mut rng), &mics, &signal, n, f64::INFINITY, &mut rng)
            .unwrap();
    let mask = coverage_mask();

    for x in scene.received[6].samples.iter_mut() {
        *x = 1e6;
    }
    let tokens = SceneTokens::from_scene(&scene, &mask, n).unwrap();
    let peak = tokens
        .audio
        .values()
        .flat_map(|f| f.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    assert!((peak - 1.0).abs() < 1e-9, "visible peak is normalized to one, got {peak}");
    assert!(tokens.scale < 1e3, "the hidden frame's huge peak must not set the scale");
    assert!(!tokens.audio.contains_key(&7));
    assert!(!tokens.coords.contains_key(&6));

    let err = SceneTokens::from_scene(&scene, &mask, n + 1).unwrap_err();
    assert!(matches!(err, ModelError::FrameLength { .. }));

    let bad = MaskSpec { audio: (0..=6).collect(), coords: [1, 2].into_iter().collect(), setup: None };
    let err = SceneTokens::from_scene(&scene, &bad, n).unwrap_err();
    assert!(matches!(err, ModelError::InvalidMask(_)));
}

#[test]
fn a_thousand_steps_memorize_a_small_batch() {
    let config = ModelConfig {
        d: 32,
        depth: 1,
        n: 256,
        heads: 4,
        tau: 16,
        max_mics: 5,
        use_tdoa: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(89);
    let mut store = ParamStore::<f32>::new();
    let params = ModelParams::init(&mut store, &config, &mut rng).unwrap();

    let mask = MaskSpec::full(5);
    let scenes: Vec<(SceneTokens, TdoaFeatureMap)> = (0..8)
        .map(|_| {
            let tokens = synthetic_tokens(5, &mask, config.n, &mut rng);
            let features = synthetic_features(&tokens, config.tau, &mut rng);
            (tokens, features)
        })
        .collect();
    let weights = LossWeights::default();
    let mut optim = AdamW::new(AdamWConfig { lr: 1e-3, weight_decay: 0.0, ..AdamWConfig::default() });

    let mut last_loss = f64::INFINITY;
    for step in 0..1000 {
        let mut grads = Grads::new();
        let mut total = 0.0;
        for (tokens, features) in &scenes {
            let mut tape = Tape::new();
            let out = forward(&mut tape, &store, &params, tokens, Some(features), Phase::Train)
                .unwrap();
            let l = loss(&mut tape, &out, tokens, &weights);
            total += tape.value(l).data()[0] as f64;
            grads.accumulate(&tape.backward(l));
            update_bn_stats(&mut store, &params, &tape, out.coord_bn);
        }
        grads.scale(1.0 / 8.0);
        optim.step(&mut store, &grads);
        if step % 250 == 249 {
            last_loss = total / 8.0;
        }
    }

    let mut mse = 0.0;
    for (tokens, features) in &scenes {
        let mut tape = Tape::new();
        let out =
            forward(&mut tape, &store, &params, tokens, Some(features), Phase::Train).unwrap();
        let pred = extract_predictions(&tape, &out);
        let err: f64 = pred
            .source
            .iter()
            .zip(&tokens.source_pos)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        mse += err / 8.0;
    }
    assert!(
        mse < 1e-3,
        "source MSE {mse} after memorizing 8 scenes (final training loss {last_loss})"
    );
}
