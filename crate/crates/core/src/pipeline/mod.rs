//! Experiment pipeline: dataset construction, augmentation, training
//! orchestration, evaluation metrics, and plot emission. This is the
//! layer the `wav2pos` CLI binary drives; everything here is a thin,
//! deterministic composition of the other modules.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::autograd::CheckpointError;
use crate::model::ModelError;
use crate::multilateration::MultilatError;
use crate::ngcc::NgccError;
use crate::room::RoomError;
use crate::signal::{SignalError, WavError};

pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod plots;
pub mod train;

pub use config::{FeatureKind, Masking, TrainConfig};
pub use dataset::{
    augment_scene, build_dataset, chirp_mixture, load_dataset, random_augment, render_condition,
    render_dataset, save_dataset, speech_shaped_noise, wav_source, ConditionSpec, DatasetSpec,
    GeometryKind, SourceKind, StoredScene, DESK_RIR_CAP, DESK_ROOM_DIMS, DESK_SHIFT_MAX,
};
pub use evaluate::{
    evaluate_model, evaluate_predictor, localize_classical, spearman_rho, ClassicalOptions,
    EvalOptions, EvalReport, Features, FrameRecord,
};
pub use plots::{emit_plots, error_cdf, trajectory_filter, write_line_svg, Series, SweepPoint};
pub use train::{load_model_checkpoint, load_ngcc_checkpoint, train_model, EpochLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Room(#[from] RoomError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Ngcc(#[from] NgccError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Multilat(#[from] MultilatError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("frame of {len} samples cannot supply a {n_out}-sample window at shift {shift}")]
    InsufficientMargin { len: usize, n_out: usize, shift: i64 },
    #[error("training: {0}")]
    Train(String),
    #[error("evaluation: {0}")]
    Eval(String),
}

/// Hex SHA-256 of a file's contents, for manifest fingerprints.
pub fn file_sha256(path: &Path) -> Result<String, std::io::Error> {
    use sha2::{Digest, Sha256};
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Writes a run manifest as `key = value` lines.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<(), std::io::Error> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    std::fs::write(path, text)
}
