//! Masked autoencoder over a set of audio frames and positions.
//!
//! A scene contributes `M + 1` entities: the source (index 0) and `M`
//! microphones (indices `1..=M`). Each entity has two modalities, an
//! audio frame and a coordinate triple, and any subset of them can be
//! masked. The model embeds the present inputs, encodes them with a
//! transformer, reassembles a full token grid with mask tokens and
//! pairwise audio/coordinate messages, decodes, and regresses clean
//! audio plus source and microphone positions.

mod config;
mod forward;
mod mask;
mod params;

pub use config::{LossWeights, ModelConfig, Phase};
pub use forward::{extract_predictions, forward, loss, ForwardOutput, Predictions, SceneTokens};
pub use mask::{sample_mask, MaskMode, MaskSpec, Setup};
pub use params::{
    mlp_forward, transformer_block, transformer_stack, update_bn_stats, BlockParams, MlpParams,
    ModelParams, BN_EPS, BN_MOMENTUM, INIT_STD, LN_EPS,
};

use thiserror::Error;

/// Errors from mask handling and model evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least 5 microphones, got {0}")]
    TooFewMics(usize),
    #[error("invalid mask: {0}")]
    InvalidMask(&'static str),
    #[error("cannot keep {known} of {total} microphone coordinates")]
    BadKnownCount { known: usize, total: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {0} has the wrong shape for this configuration")]
    ParamShape(String),
    #[error("audio frame has {have} samples, model expects {want}")]
    FrameLength { have: usize, want: usize },
    #[error("need at least 2 visible microphone audio frames, got {0}")]
    TooFewAudio(usize),
    #[error("delay feature mismatch: {0}")]
    FeatureMismatch(&'static str),
}

#[cfg(test)]
mod tests;
