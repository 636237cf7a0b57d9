//! Training orchestration: deterministic per-epoch streams, batched
//! gradient accumulation, best-validation checkpointing, and
//! stop/resume that reproduces the uninterrupted run.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{
    entries_of, load_tensors, save_tensors, AdamW, AdamWConfig, Grads, ParamStore, Tape, Tensor,
};
use crate::model::{
    extract_predictions, forward, loss, sample_mask, update_bn_stats, MaskMode, MaskSpec,
    ModelConfig, ModelParams, Phase, SceneTokens,
};
use crate::ngcc::{gcc_features, ngcc_features, NgccConfig, NgccParams, TdoaFeatureMap};
use crate::pipeline::config::{FeatureKind, Masking, TrainConfig};
use crate::pipeline::dataset::{random_augment, StoredScene};
use crate::pipeline::PipelineError;
use crate::room::Scene;

// Seed-stream layout: one stream per purpose so resuming at an epoch
// boundary replays exactly the draws the uninterrupted run would make.
const STREAM_EPOCH: u64 = 1_000_000;
const STREAM_VAL: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean squared source-position error on the validation items, in
    /// square metres.
    pub val_source_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_path: PathBuf,
    pub latest_path: PathBuf,
    pub log_path: PathBuf,
}

/// Saves a pretrained delay-classifier store with its configuration, so
/// it can be reloaded without outside knowledge.
pub fn save_ngcc_checkpoint(
    path: &Path,
    store: &ParamStore<f32>,
    params: &NgccParams,
) -> Result<(), PipelineError> {
    let c = &params.config;
    let mut entries = entries_of(store);
    entries.push((
        "ngcc.meta".to_string(),
        Tensor::vector(vec![
            c.tau as f32,
            c.channels as f32,
            c.filter_len as f32,
            c.head_hidden as f32,
        ]),
    ));
    save_tensors(path, &entries)?;
    Ok(())
}

pub fn load_ngcc_checkpoint(path: &Path) -> Result<(ParamStore<f32>, NgccParams), PipelineError> {
    let map = load_tensors(path)?;
    let meta = map
        .get("ngcc.meta")
        .ok_or_else(|| PipelineError::Train(format!("{}: missing ngcc.meta", path.display())))?;
    let d = meta.data();
    if d.len() != 4 {
        return Err(PipelineError::Train("ngcc.meta must hold 4 values".into()));
    }
    let config = NgccConfig {
        tau: d[0] as usize,
        channels: d[1] as usize,
        filter_len: d[2] as usize,
        head_hidden: d[3] as usize,
    };
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = NgccParams::init(config, &mut store, &mut rng)?;
    store.load_values(&map).map_err(PipelineError::Train)?;
    Ok((store, params))
}

fn model_meta(config: &ModelConfig) -> Tensor<f32> {
    Tensor::vector(vec![
        config.d as f32,
        config.depth as f32,
        config.n as f32,
        config.heads as f32,
        config.tau as f32,
        config.max_mics as f32,
        if config.use_tdoa { 1.0 } else { 0.0 },
    ])
}

/// Saves model parameters together with the architecture description.
pub fn save_model_checkpoint(
    path: &Path,
    store: &ParamStore<f32>,
    config: &ModelConfig,
) -> Result<(), PipelineError> {
    let mut entries = entries_of(store);
    entries.push(("meta.model".to_string(), model_meta(config)));
    save_tensors(path, &entries)?;
    Ok(())
}

pub fn load_model_checkpoint(
    path: &Path,
) -> Result<(ParamStore<f32>, ModelParams), PipelineError> {
    let map = load_tensors(path)?;
    let meta = map
        .get("meta.model")
        .ok_or_else(|| PipelineError::Train(format!("{}: missing meta.model", path.display())))?;
    let d = meta.data();
    if d.len() != 7 {
        return Err(PipelineError::Train("meta.model must hold 7 values".into()));
    }
    let config = ModelConfig {
        d: d[0] as usize,
        depth: d[1] as usize,
        n: d[2] as usize,
        heads: d[3] as usize,
        tau: d[4] as usize,
        max_mics: d[5] as usize,
        use_tdoa: d[6] != 0.0,
    };
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ModelParams::init(&mut store, &config, &mut rng)?;
    store.load_values(&map).map_err(PipelineError::Train)?;
    let params = ModelParams::from_store(&store, &config)?;
    Ok((store, params))
}

struct Item {
    tokens: SceneTokens,
    features: Option<TdoaFeatureMap>,
}

fn build_item(
    scene: &Scene,
    config: &TrainConfig,
    ngcc: Option<&(ParamStore<f32>, NgccParams)>,
    rng: &mut impl Rng,
) -> Result<Item, PipelineError> {
    let aug = random_augment(scene, config.model.n, config.shift_max, config.snr_range_db, rng)?;
    let m = aug.num_mics();
    let mask = match config.masking {
        Masking::Fixed(setup) => MaskSpec::for_setup(setup, m, m)?,
        Masking::Random => sample_mask(m, MaskMode::Random, rng)?,
    };
    let features = if config.model.use_tdoa {
        Some(match ngcc {
            None => gcc_features(&aug, &mask, config.model.tau)?,
            Some((store, params)) => ngcc_features(store, params, &aug, &mask)?,
        })
    } else {
        None
    };
    let tokens = SceneTokens::from_scene(&aug, &mask, config.model.n)?;
    Ok(Item { tokens, features })
}

fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<(), PipelineError> {
    let mut text = String::from("epoch,train_loss,val_loss,val_source_mse\n");
    for e in log {
        text.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_source_mse
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_log_csv(path: &Path) -> Result<Vec<EpochLog>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().ok();
        if let (Ok(epoch), Some(a), Some(b), Some(c)) =
            (parts[0].parse::<usize>(), parse(parts[1]), parse(parts[2]), parse(parts[3]))
        {
            out.push(EpochLog { epoch, train_loss: a, val_loss: b, val_source_mse: c });
        }
    }
    Ok(out)
}

/// Runs the training loop. The last `val_fraction` of `scenes` is the
/// validation split; its augmentation views are frozen from dedicated
/// seed streams so validation losses are comparable across epochs. With
/// `resume`, picks up after the last completed epoch recorded in
/// `run_dir` and reproduces exactly what the uninterrupted run would
/// have computed.
pub fn train_model(
    scenes: &[StoredScene],
    config: &TrainConfig,
    run_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(run_dir)?;
    if scenes.len() < 4 {
        return Err(PipelineError::Train(format!(
            "need at least 4 scenes, got {}",
            scenes.len()
        )));
    }
    for s in scenes {
        let m = s.scene.num_mics();
        if m < 5 || m > config.model.max_mics {
            return Err(PipelineError::Train(format!(
                "scene {} has {m} microphones, outside 5..={}",
                s.id, config.model.max_mics
            )));
        }
    }
    let n_val = ((scenes.len() as f64 * config.val_fraction).round() as usize)
        .clamp(1, scenes.len() - 1);
    let n_train = scenes.len() - n_val;

    let ngcc = match config.feature {
        FeatureKind::Gcc => None,
        FeatureKind::Ngcc => {
            let path = config.ngcc_checkpoint.as_ref().expect("validated");
            let loaded = load_ngcc_checkpoint(path)?;
            if loaded.1.config.tau != config.model.tau {
                return Err(PipelineError::Train(format!(
                    "correlation span mismatch: front-end gives {}, model wants {}",
                    loaded.1.config.tau, config.model.tau
                )));
            }
            Some(loaded)
        }
    };

    let mut store = ParamStore::<f32>::new();
    let mut rng_init = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::init(&mut store, &config.model, &mut rng_init)?;
    let mut optim = AdamW::new(AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });

    let best_path = run_dir.join("model_best.tns");
    let latest_path = run_dir.join("latest.tns");
    let log_path = run_dir.join("train_log.csv");
    let mut start_epoch = 0usize;
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut log: Vec<EpochLog> = Vec::new();

    if resume {
        if !latest_path.exists() {
            return Err(PipelineError::Train(format!(
                "nothing to resume: {} does not exist",
                latest_path.display()
            )));
        }
        let map = load_tensors(&latest_path)?;
        store.load_values(&map).map_err(PipelineError::Train)?;
        optim.import_state(&store, &map).map_err(PipelineError::Train)?;
        let prog = map
            .get("train.progress")
            .ok_or_else(|| PipelineError::Train("checkpoint missing train.progress".into()))?;
        let d = prog.data();
        if d.len() != 3 {
            return Err(PipelineError::Train("train.progress must hold 3 values".into()));
        }
        start_epoch = d[0] as usize;
        best_epoch = d[1] as usize;
        best_val = d[2] as f64;
        log = read_log_csv(&log_path)?;
        log.retain(|e| e.epoch < start_epoch);
    }

    let val_items: Vec<Item> = scenes[n_train..]
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(STREAM_VAL + k as u64);
            build_item(&s.scene, config, ngcc.as_ref(), &mut rng)
        })
        .collect::<Result<_, _>>()?;

    for epoch in start_epoch..config.epochs {
        let mut rng_e = ChaCha8Rng::seed_from_u64(config.seed);
        rng_e.set_stream(STREAM_EPOCH + epoch as u64);
        let mut order: Vec<usize> = (0..n_train).collect();
        for i in (1..order.len()).rev() {
            let j = rng_e.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = Grads::new();
            for &idx in chunk {
                let item = build_item(&scenes[idx].scene, config, ngcc.as_ref(), &mut rng_e)?;
                let mut tape = Tape::new();
                let out = forward(
                    &mut tape,
                    &store,
                    &params,
                    &item.tokens,
                    item.features.as_ref(),
                    Phase::Train,
                )?;
                let l = loss(&mut tape, &out, &item.tokens, &config.loss);
                let lv = tape.value(l).data()[0] as f64;
                if !lv.is_finite() {
                    return Err(PipelineError::Train(format!(
                        "loss diverged at epoch {epoch}, scene {} (loss {lv})",
                        scenes[idx].id
                    )));
                }
                loss_sum += lv;
                grads.accumulate(&tape.backward(l));
                update_bn_stats(&mut store, &params, &tape, out.coord_bn);
            }
            grads.scale(1.0 / chunk.len() as f32);
            optim.step(&mut store, &grads);
        }
        let train_loss = loss_sum / n_train as f64;

        let mut val_loss = 0.0;
        let mut val_mse = 0.0;
        for item in &val_items {
            let mut tape = Tape::new();
            let out = forward(
                &mut tape,
                &store,
                &params,
                &item.tokens,
                item.features.as_ref(),
                Phase::Eval,
            )?;
            let l = loss(&mut tape, &out, &item.tokens, &config.loss);
            val_loss += tape.value(l).data()[0] as f64;
            let pred = extract_predictions(&tape, &out);
            val_mse += pred
                .source
                .iter()
                .zip(&item.tokens.source_pos)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        val_loss /= val_items.len() as f64;
        val_mse /= val_items.len() as f64;

        log.push(EpochLog { epoch, train_loss, val_loss, val_source_mse: val_mse });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            save_model_checkpoint(&best_path, &store, &config.model)?;
        }

        let mut entries = entries_of(&store);
        entries.extend(optim.export_state(&store));
        entries.push((
            "train.progress".to_string(),
            Tensor::vector(vec![(epoch + 1) as f32, best_epoch as f32, best_val as f32]),
        ));
        save_tensors(&latest_path, &entries)?;
        write_log_csv(&log_path, &log)?;
        eprintln!(
            "epoch {epoch}: train {train_loss:.4} val {val_loss:.4} src-mse {val_mse:.4} (best @{best_epoch})"
        );
    }

    Ok(TrainOutcome {
        epochs: log,
        best_epoch,
        best_val_loss: best_val,
        best_path,
        latest_path,
        log_path,
    })
}
