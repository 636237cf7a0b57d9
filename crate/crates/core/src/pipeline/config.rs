//! Training configuration: presets and a flat `key = value` file format.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::model::{LossWeights, ModelConfig, Setup};
use crate::pipeline::PipelineError;

/// Which per-pair TDOA feature the model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Whitened cross-correlation, no learned parameters.
    Gcc,
    /// The pretrained delay-classifier front-end.
    Ngcc,
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcc" => Ok(FeatureKind::Gcc),
            "ngcc" => Ok(FeatureKind::Ngcc),
            other => Err(format!("unknown feature kind {other:?} (expected gcc or ngcc)")),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Gcc => "gcc",
            FeatureKind::Ngcc => "ngcc",
        })
    }
}

/// How masks are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Masking {
    /// The same protocol mask every presentation.
    Fixed(Setup),
    /// Random visibility subsets each presentation.
    Random,
}

impl FromStr for Masking {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Masking::Random),
            "1a" => Ok(Masking::Fixed(Setup::OneA)),
            "1b" => Ok(Masking::Fixed(Setup::OneB)),
            "2a" => Ok(Masking::Fixed(Setup::TwoA)),
            "2b" => Ok(Masking::Fixed(Setup::TwoB)),
            other => {
                Err(format!("unknown masking {other:?} (expected random, 1a, 1b, 2a, or 2b)"))
            }
        }
    }
}

impl fmt::Display for Masking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Masking::Random => f.write_str("random"),
            Masking::Fixed(s) => write!(f, "{s}"),
        }
    }
}

/// Everything a training run needs besides the dataset itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub masking: Masking,
    pub feature: FeatureKind,
    /// Required when `feature` is `Ngcc`.
    pub ngcc_checkpoint: Option<PathBuf>,
    /// Largest augmentation time shift, samples each way.
    pub shift_max: usize,
    /// Augmentation noise range, dB; an infinite lower bound disables
    /// noise injection.
    pub snr_range_db: (f64, f64),
    /// Trailing fraction of the dataset held out for validation.
    pub val_fraction: f64,
}

impl TrainConfig {
    /// The published full-scale recipe: 500 epochs, batch 256, learning
    /// rate 0.0005, weight decay 0.1, on the full-size model.
    pub fn full() -> TrainConfig {
        TrainConfig {
            dataset: PathBuf::from("dataset"),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            epochs: 500,
            batch_size: 256,
            lr: 5e-4,
            weight_decay: 0.1,
            seed: 1,
            masking: Masking::Random,
            feature: FeatureKind::Gcc,
            ngcc_checkpoint: None,
            shift_max: 800,
            snr_range_db: (0.0, 30.0),
            val_fraction: 0.1,
        }
    }

    /// A recipe sized for a desktop CPU: the small model on a 6-mic
    /// room, batch 32, 60 epochs. The correlation span covers the
    /// largest delay the 4 x 5 x 2.5 m benchmark room can produce.
    pub fn desk() -> TrainConfig {
        let tau = crate::pipeline::dataset::room_tau(crate::pipeline::dataset::DESK_ROOM_DIMS);
        TrainConfig {
            model: ModelConfig { tau, max_mics: 6, ..ModelConfig::desk() },
            epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.05,
            masking: Masking::Fixed(Setup::OneA),
            ..TrainConfig::full()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate().map_err(PipelineError::Model)?;
        self.loss.validate().map_err(PipelineError::Model)?;
        let bad = |msg: &str| PipelineError::Train(msg.to_string());
        if self.epochs == 0 {
            return Err(bad("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr must be positive and finite"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad("weight_decay must be non-negative"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(bad("val_fraction must lie in (0, 1)"));
        }
        if self.snr_range_db.0 > self.snr_range_db.1 {
            return Err(bad("snr range must be ordered low..high"));
        }
        if self.feature == FeatureKind::Ngcc && self.ngcc_checkpoint.is_none() {
            return Err(bad("feature ngcc needs ngcc_checkpoint"));
        }
        Ok(())
    }

    /// The configuration as ordered `(key, value)` pairs; the inverse of
    /// [`TrainConfig::parse`] and the manifest echo format.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| e.push((k.to_string(), v));
        push("dataset", self.dataset.display().to_string());
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("lr", self.lr.to_string());
        push("weight_decay", self.weight_decay.to_string());
        push("seed", self.seed.to_string());
        push("masking", self.masking.to_string());
        push("feature", self.feature.to_string());
        if let Some(p) = &self.ngcc_checkpoint {
            push("ngcc_checkpoint", p.display().to_string());
        }
        push("shift_max", self.shift_max.to_string());
        push("snr_min_db", self.snr_range_db.0.to_string());
        push("snr_max_db", self.snr_range_db.1.to_string());
        push("val_fraction", self.val_fraction.to_string());
        push("model_d", self.model.d.to_string());
        push("model_depth", self.model.depth.to_string());
        push("model_frame", self.model.n.to_string());
        push("model_heads", self.model.heads.to_string());
        push("model_tau", self.model.tau.to_string());
        push("model_max_mics", self.model.max_mics.to_string());
        push("use_tdoa", self.model.use_tdoa.to_string());
        push("lambda_audio", self.loss.lambda_audio.to_string());
        push("lambda_source", self.loss.lambda_source.to_string());
        push("lambda_mic", self.loss.lambda_mic.to_string());
        e
    }

    /// Serializes to the flat file format.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_entries() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_file(path: &std::path::Path) -> Result<TrainConfig, PipelineError> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped. A `preset = desk|full` line resets every field to that
    /// preset, so overrides must come after it.
    pub fn parse(text: &str) -> Result<TrainConfig, PipelineError> {
        let mut cfg = TrainConfig::full();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| PipelineError::Config { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            macro_rules! parse_as {
                ($t:ty) => {
                    value
                        .parse::<$t>()
                        .map_err(|e| err(format!("bad value {value:?} for {key}: {e}")))?
                };
            }
            match key {
                "preset" => {
                    cfg = match value {
                        "desk" => TrainConfig::desk(),
                        "full" => TrainConfig::full(),
                        other => return Err(err(format!("unknown preset {other:?}"))),
                    }
                }
                "dataset" => cfg.dataset = PathBuf::from(value),
                "epochs" => cfg.epochs = parse_as!(usize),
                "batch_size" => cfg.batch_size = parse_as!(usize),
                "lr" => cfg.lr = parse_as!(f64),
                "weight_decay" => cfg.weight_decay = parse_as!(f64),
                "seed" => cfg.seed = parse_as!(u64),
                "masking" => cfg.masking = parse_as!(Masking),
                "feature" => cfg.feature = parse_as!(FeatureKind),
                "ngcc_checkpoint" => cfg.ngcc_checkpoint = Some(PathBuf::from(value)),
                "shift_max" => cfg.shift_max = parse_as!(usize),
                "snr_min_db" => cfg.snr_range_db.0 = parse_as!(f64),
                "snr_max_db" => cfg.snr_range_db.1 = parse_as!(f64),
                "val_fraction" => cfg.val_fraction = parse_as!(f64),
                "model_d" => cfg.model.d = parse_as!(usize),
                "model_depth" => cfg.model.depth = parse_as!(usize),
                "model_frame" => cfg.model.n = parse_as!(usize),
                "model_heads" => cfg.model.heads = parse_as!(usize),
                "model_tau" => cfg.model.tau = parse_as!(usize),
                "model_max_mics" => cfg.model.max_mics = parse_as!(usize),
                "use_tdoa" => cfg.model.use_tdoa = parse_as!(bool),
                "lambda_audio" => cfg.loss.lambda_audio = parse_as!(f64),
                "lambda_source" => cfg.loss.lambda_source = parse_as!(f64),
                "lambda_mic" => cfg.loss.lambda_mic = parse_as!(f64),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
