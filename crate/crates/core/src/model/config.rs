use super::ModelError;

/// Architecture hyperparameters for the localization autoencoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Number of transformer blocks in the encoder and in the decoder.
    pub depth: usize,
    /// Audio samples per token.
    pub n: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Correlation half-window in samples; delay features cover
    /// `2 * tau + 1` lags.
    pub tau: usize,
    /// Largest microphone count the model will be asked to handle.
    pub max_mics: usize,
    /// Feed pooled pairwise delay features into the coordinate heads.
    pub use_tdoa: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 256,
            depth: 4,
            n: 2048,
            heads: 8,
            tau: 314,
            max_mics: 11,
            use_tdoa: true,
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        ModelConfig { d: 64, depth: 2, n: 512, heads: 8, tau: 32, max_mics: 11, use_tdoa: true }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig("width must be a positive multiple of heads"));
        }
        if self.n == 0 {
            return Err(ModelError::InvalidConfig("token length must be positive"));
        }
        if self.depth == 0 {
            return Err(ModelError::InvalidConfig("need at least one transformer block"));
        }
        if self.tau == 0 {
            return Err(ModelError::InvalidConfig("correlation half-window must be positive"));
        }
        if self.max_mics < 5 {
            return Err(ModelError::InvalidConfig("need room for at least 5 microphones"));
        }
        Ok(())
    }

    /// Width of a pooled pair feature: correlation lags plus two
    /// coordinate embeddings.
    pub fn pair_feature_width(&self) -> usize {
        2 * self.tau + 1 + 2 * self.d
    }

    /// Input width of the coordinate heads: decoder token and global
    /// audio summary, plus the pooled delay feature when enabled.
    pub fn head_input_width(&self) -> usize {
        if self.use_tdoa { 3 * self.d } else { 2 * self.d }
    }
}

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight on the mean squared audio reconstruction error.
    pub lambda_audio: f64,
    /// Weight on the squared source position error.
    pub lambda_source: f64,
    /// Weight on the mean squared masked-microphone position error.
    pub lambda_mic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_audio: 0.1, lambda_source: 1.0, lambda_mic: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.lambda_audio < 0.0 || self.lambda_source < 0.0 || self.lambda_mic < 0.0 {
            return Err(ModelError::InvalidConfig("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Whether batch normalization uses batch statistics (training) or the
/// stored running estimates (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}
