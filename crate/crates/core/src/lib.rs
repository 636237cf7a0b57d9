//! Sound-source localization from ad-hoc microphone sets.
//!
//! The crate covers the full experimental loop for single-source 3D
//! localization from multichannel audio:
//!
//! * [`signal`] — correlation primitives (windowed cross-correlation,
//!   GCC-PHAT), SNR utilities, and 16-bit PCM WAV I/O.
//! * [`room`] — image-source room impulse responses, scene rendering,
//!   and scene samplers / on-disk scene datasets.
//! * [`multilateration`] — classical TDOA localization: peak picking,
//!   Levenberg-Marquardt least squares, and RANSAC over peak candidates.
//! * [`autograd`] — a small reverse-mode automatic differentiation
//!   engine with the layers needed here (linear, layer/batch norm, GELU,
//!   softmax, multi-head self-attention, set max-pooling) plus AdamW and
//!   a binary checkpoint container.
//! * [`ngcc`] — a trainable correlation front-end that classifies
//!   inter-microphone delays and emits per-pair TDOA feature vectors.
//! * [`model`] — a masked-autoencoder set model that jointly decodes
//!   audio and coordinates; masked-coordinate decoding yields the source
//!   position estimate.
//! * [`pipeline`] — dataset construction, augmentation, training,
//!   evaluation with bootstrap confidence intervals, and plot emission;
//!   this is what the `wav2pos` CLI binary drives.

pub mod autograd;
pub mod model;
pub mod multilateration;
pub mod ngcc;
pub mod pipeline;
pub mod room;
pub mod signal;

/// Speed of sound in air, m/s, fixed across the whole crate.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Sample rate used by every bundled dataset and preset, Hz.
pub const SAMPLE_RATE: u32 = 16_000;
