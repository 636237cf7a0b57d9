//! Correlation and SNR primitives shared by the classical and learned
//! localization paths.
//!
//! Lag convention, used everywhere in this crate: `values[t]` holds
//! `(1/N) * sum_n a[n] * b[n + t]`, so when `b` is a delayed copy of `a`
//! the peak sits at a **positive** lag equal to the delay. For a
//! microphone pair `(i, j)` this means the correlation of
//! `(frame_i, frame_j)` peaks at `(d_j - d_i) * fs / c`, the delay of
//! `j` relative to `i`.
//!
//! ```
//! use wav2pos::signal::{gcc_phat, AudioFrame};
//!
//! let mut a = vec![0.0; 256];
//! for (n, s) in a.iter_mut().enumerate() {
//!     *s = ((n * 37 + 11) % 97) as f64 / 97.0 - 0.5;
//! }
//! let mut b = vec![0.0; 256];
//! b[10..].copy_from_slice(&a[..246]);
//! let a = AudioFrame::new(a, 16_000);
//! let b = AudioFrame::new(b, 16_000);
//! let corr = gcc_phat(&a, &b, 20).unwrap();
//! assert_eq!(corr.argmax_lag(), 10);
//! ```

mod wav;

pub use wav::{dequantize_i16, quantize_i16, read_wav_mono16, write_wav_mono16, WavError};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

/// Spectral floor used when normalizing cross-spectra in [`gcc_phat`].
pub const PHAT_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("frame lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("max lag {max_lag} must be smaller than the frame length {len}")]
    LagOutOfRange { max_lag: usize, len: usize },
    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),
}

/// A mono audio frame with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFrame {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioFrame {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean power `(1/N) * sum x^2`; zero for an empty frame.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

/// Correlation values over lags `-tau ..= tau`.
///
/// Index `i` corresponds to lag `i as i64 - tau as i64`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVector {
    pub values: Vec<f64>,
    pub tau: usize,
}

impl CorrelationVector {
    pub fn new(values: Vec<f64>, tau: usize) -> Self {
        assert_eq!(values.len(), 2 * tau + 1, "need one value per lag in -tau..=tau");
        Self { values, tau }
    }

    pub fn lag_at(&self, index: usize) -> i64 {
        index as i64 - self.tau as i64
    }

    pub fn value_at_lag(&self, lag: i64) -> f64 {
        let idx = lag + self.tau as i64;
        self.values[idx as usize]
    }

    /// Lag of the maximum value; earliest lag wins ties.
    pub fn argmax_lag(&self) -> i64 {
        let mut best = 0usize;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.lag_at(best)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }
}

fn check_pair(a: &AudioFrame, b: &AudioFrame, max_lag: usize) -> Result<(), SignalError> {
    if a.len() != b.len() {
        return Err(SignalError::LengthMismatch(a.len(), b.len()));
    }
    if a.sample_rate != b.sample_rate {
        return Err(SignalError::SampleRateMismatch(a.sample_rate, b.sample_rate));
    }
    if max_lag >= a.len() {
        return Err(SignalError::LagOutOfRange { max_lag, len: a.len() });
    }
    Ok(())
}

fn next_pow2(n: usize) -> usize {
    let mut p = 1usize;
    while p < n {
        p <<= 1;
    }
    p
}

/// Cross-spectrum `conj(A) * B` of both frames after zero-padding to the
/// next power of two at or above `2N`. Shared by [`xcorr`] and [`gcc_phat`].
fn cross_spectrum(a: &[f64], b: &[f64]) -> (Vec<Complex<f64>>, usize) {
    let n = a.len();
    let p = next_pow2(2 * n);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(p);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|x| Complex::new(*x, 0.0)).collect();
    fa.resize(p, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|x| Complex::new(*x, 0.0)).collect();
    fb.resize(p, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    let cross: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    (cross, p)
}

/// Inverse transform of a spectrum, keeping lags `-tau ..= tau`.
fn lags_from_spectrum(mut spec: Vec<Complex<f64>>, p: usize, tau: usize, scale: f64) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(p);
    ifft.process(&mut spec);
    let mut out = Vec::with_capacity(2 * tau + 1);
    for lag in -(tau as i64)..=(tau as i64) {
        let idx = lag.rem_euclid(p as i64) as usize;
        out.push(spec[idx].re * scale / p as f64);
    }
    out
}

/// Windowed cross-correlation of two equal-length frames over lags
/// `-max_lag ..= max_lag`, zero-padded (linear, not circular) and scaled
/// by `1/N` so the zero-lag autocorrelation of a unit-power frame is 1.
pub fn xcorr(
    a: &AudioFrame,
    b: &AudioFrame,
    max_lag: usize,
) -> Result<CorrelationVector, SignalError> {
    check_pair(a, b, max_lag)?;
    let (cross, p) = cross_spectrum(&a.samples, &b.samples);
    let values = lags_from_spectrum(cross, p, max_lag, 1.0 / a.len() as f64);
    Ok(CorrelationVector::new(values, max_lag))
}

/// Generalized cross-correlation with phase transform weighting.
///
/// The cross-spectrum is normalized bin-wise to unit magnitude (floored
/// at [`PHAT_EPSILON`]) before the inverse transform, which whitens the
/// signals and sharpens the correlation peak. Peak magnitudes never
/// exceed 1 beyond rounding error.
pub fn gcc_phat(
    a: &AudioFrame,
    b: &AudioFrame,
    max_lag: usize,
) -> Result<CorrelationVector, SignalError> {
    check_pair(a, b, max_lag)?;
    if a.mean_power() == 0.0 && b.mean_power() == 0.0 {
        return Err(SignalError::DegenerateSignal("both frames are all-zero"));
    }
    let (cross, p) = cross_spectrum(&a.samples, &b.samples);
    let white: Vec<Complex<f64>> =
        cross.iter().map(|c| c / c.norm().max(PHAT_EPSILON)).collect();
    let values = lags_from_spectrum(white, p, max_lag, 1.0);
    Ok(CorrelationVector::new(values, max_lag))
}

/// True when the frame's mean power is above `threshold_db` (dB relative
/// to full scale, i.e. `10*log10(mean(x^2))`).
pub fn power_gate(frame: &AudioFrame, threshold_db: f64) -> bool {
    let p = frame.mean_power();
    if p <= 0.0 {
        return false;
    }
    10.0 * p.log10() > threshold_db
}

/// Adds white Gaussian noise scaled so the measured SNR equals `snr_db`
/// exactly (the noise is drawn first, then rescaled against its own
/// empirical energy). `f64::INFINITY` returns the frame unchanged.
pub fn add_noise_at_snr(
    frame: &AudioFrame,
    snr_db: f64,
    rng: &mut impl rand::Rng,
) -> Result<AudioFrame, SignalError> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(frame.clone());
    }
    let sig_energy: f64 = frame.samples.iter().map(|x| x * x).sum();
    if sig_energy == 0.0 {
        return Err(SignalError::DegenerateSignal(
            "cannot set a finite SNR on an all-zero frame",
        ));
    }
    let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
    let noise: Vec<f64> = (0..frame.len()).map(|_| rand::Rng::sample(rng, normal)).collect();
    let noise_energy: f64 = noise.iter().map(|x| x * x).sum();
    if noise_energy == 0.0 {
        return Err(SignalError::DegenerateSignal("drawn noise has zero energy"));
    }
    let target_energy = sig_energy * 10f64.powf(-snr_db / 10.0);
    let scale = (target_energy / noise_energy).sqrt();
    let samples = frame
        .samples
        .iter()
        .zip(&noise)
        .map(|(x, w)| x + scale * w)
        .collect();
    Ok(AudioFrame::new(samples, frame.sample_rate))
}

/// SNR of `noisy` against the reference `clean`, in dB. Identical frames
/// give `f64::INFINITY`.
pub fn measure_snr(clean: &AudioFrame, noisy: &AudioFrame) -> Result<f64, SignalError> {
    if clean.len() != noisy.len() {
        return Err(SignalError::LengthMismatch(clean.len(), noisy.len()));
    }
    let sig: f64 = clean.samples.iter().map(|x| x * x).sum();
    if sig == 0.0 {
        return Err(SignalError::DegenerateSignal("reference frame is all-zero"));
    }
    let err: f64 = clean
        .samples
        .iter()
        .zip(&noisy.samples)
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (sig / err).log10())
}
