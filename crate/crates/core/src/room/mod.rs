//! Shoebox room simulation: image-source impulse responses, scene
//! rendering with calibrated noise, and scene geometry samplers.
//!
//! Amplitudes follow free-field spherical spreading `1/(4*pi*d)` with a
//! per-bounce reflection coefficient derived from the room's target
//! reverberation time via Sabine's formula. Fractional arrival times are
//! spread over an 81-tap Hann-windowed sinc, which collapses to a single
//! tap when the delay is an integer number of samples.

use crate::signal::AudioFrame;
use crate::{SAMPLE_RATE, SPEED_OF_SOUND};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

/// Half-width of the fractional-delay interpolation kernel, in taps.
const SINC_HALF: i64 = 40;

#[derive(Debug, Error)]
pub enum RoomError {
    #[error("room dimensions must be positive, got {0:?}")]
    DegenerateRoom([f64; 3]),
    #[error("position {pos:?} lies outside the room {dims:?}")]
    OutsideRoom { pos: [f64; 3], dims: [f64; 3] },
    #[error("scene needs at least one microphone")]
    NoMicrophones,
    #[error("source signal too short: {got} samples, need at least {need}")]
    SourceTooShort { got: usize, need: usize },
    #[error("reverberation time must be non-negative, got {0}")]
    NegativeT60(f64),
}

/// A shoebox room with a target reverberation time. `t60 == 0` is
/// anechoic (direct path only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub dims: [f64; 3],
    pub t60: f64,
}

impl Room {
    pub fn new(dims: [f64; 3], t60: f64) -> Result<Self, RoomError> {
        if dims.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(RoomError::DegenerateRoom(dims));
        }
        if t60 < 0.0 || t60.is_nan() {
            return Err(RoomError::NegativeT60(t60));
        }
        Ok(Self { dims, t60 })
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn diagonal(&self) -> f64 {
        self.dims.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// Sabine absorption coefficient `0.161 V / (t60 A)`, clamped to
    /// `(0, 1]`. Rooms whose requested decay is shorter than fully
    /// absorbent walls allow saturate at 1 (anechoic behaviour).
    pub fn sabine_alpha(&self) -> f64 {
        if self.t60 <= 0.0 {
            return 1.0;
        }
        (0.161 * self.volume() / (self.t60 * self.surface_area())).min(1.0)
    }

    /// Per-bounce amplitude reflection coefficient `sqrt(1 - alpha)`.
    pub fn reflection_coeff(&self) -> f64 {
        (1.0 - self.sabine_alpha()).max(0.0).sqrt()
    }

    pub fn contains(&self, pos: [f64; 3]) -> bool {
        pos.iter()
            .zip(&self.dims)
            .all(|(p, d)| p.is_finite() && *p >= 0.0 && *p <= *d)
    }

    fn check_inside(&self, pos: [f64; 3]) -> Result<(), RoomError> {
        if self.contains(pos) {
            Ok(())
        } else {
            Err(RoomError::OutsideRoom { pos, dims: self.dims })
        }
    }
}

/// Maximum inter-microphone delay (in samples) any geometry inside the
/// room can produce: `ceil(|dims| * fs / c)`.
pub fn max_delay_samples(room_dims: [f64; 3]) -> usize {
    let diag = room_dims.iter().map(|d| d * d).sum::<f64>().sqrt();
    (diag * SAMPLE_RATE as f64 / SPEED_OF_SOUND).ceil() as usize
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Image-source impulse response between one source and one microphone.
///
/// `max_order` bounds the total number of wall reflections per image.
/// The response length is chosen to cover the farthest admitted image
/// plus the interpolation tail.
pub fn simulate_rir(
    room: &Room,
    source: [f64; 3],
    mic: [f64; 3],
    max_order: usize,
) -> Result<Vec<f64>, RoomError> {
    room.check_inside(source)?;
    room.check_inside(mic)?;
    let beta = room.reflection_coeff();
    // Bounce order o implies an image at distance of at least roughly
    // o * min(dims); cap the travel distance accordingly so the length
    // of the response tracks the requested order.
    let max_dim = room.dims.iter().cloned().fold(0.0f64, f64::max);
    let max_dist = room.diagonal() + (max_order as f64 + 1.0) * max_dim;
    Ok(rir_capped(room, source, mic, beta, max_order, max_dist))
}

/// Image-source response truncated at a travel-distance budget; used by
/// the renderer, which only needs the response up to its analysis
/// window.
fn rir_capped(
    room: &Room,
    source: [f64; 3],
    mic: [f64; 3],
    beta: f64,
    max_order: usize,
    max_dist: f64,
) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let mut taps: Vec<(f64, f64)> = Vec::new();
    let mut farthest = dist(source, mic);

    if beta == 0.0 {
        let d = dist(source, mic);
        taps.push((d * fs / SPEED_OF_SOUND, 1.0 / (4.0 * std::f64::consts::PI * d)));
    } else {
        let [lx, ly, lz] = room.dims;
        let nx = (max_dist / (2.0 * lx)).ceil() as i64 + 1;
        let ny = (max_dist / (2.0 * ly)).ceil() as i64 + 1;
        let nz = (max_dist / (2.0 * lz)).ceil() as i64 + 1;
        for mx in -nx..=nx {
            for q in 0..2i64 {
                let ix = (1 - 2 * q) as f64 * source[0] + 2.0 * mx as f64 * lx;
                let rx = (mx - q).unsigned_abs() + mx.unsigned_abs();
                let dx = ix - mic[0];
                if dx.abs() > max_dist {
                    continue;
                }
                for my in -ny..=ny {
                    for j in 0..2i64 {
                        let iy = (1 - 2 * j) as f64 * source[1] + 2.0 * my as f64 * ly;
                        let ry = (my - j).unsigned_abs() + my.unsigned_abs();
                        let dy = iy - mic[1];
                        let dxy2 = dx * dx + dy * dy;
                        if dxy2 > max_dist * max_dist {
                            continue;
                        }
                        for mz in -nz..=nz {
                            for k in 0..2i64 {
                                let iz = (1 - 2 * k) as f64 * source[2] + 2.0 * mz as f64 * lz;
                                let rz = (mz - k).unsigned_abs() + mz.unsigned_abs();
                                let order = rx + ry + rz;
                                if order as usize > max_order {
                                    continue;
                                }
                                let dz = iz - mic[2];
                                let d = (dxy2 + dz * dz).sqrt();
                                if d > max_dist || d < 1e-9 {
                                    continue;
                                }
                                let amp = beta.powi(order as i32)
                                    / (4.0 * std::f64::consts::PI * d);
                                taps.push((d * fs / SPEED_OF_SOUND, amp));
                                farthest = farthest.max(d);
                            }
                        }
                    }
                }
            }
        }
    }

    let len = (farthest * fs / SPEED_OF_SOUND).ceil() as usize + SINC_HALF as usize + 2;
    let mut h = vec![0.0; len];
    for (delay, amp) in taps {
        add_windowed_sinc(&mut h, delay, amp);
    }
    h
}

/// Spreads one arrival over the Hann-windowed sinc kernel. An integer
/// delay hits the sinc zeros exactly and contributes a single tap.
fn add_windowed_sinc(h: &mut [f64], delay: f64, amp: f64) {
    let center = delay.round() as i64;
    let half_plus = SINC_HALF as f64 + 0.5;
    for n in (center - SINC_HALF).max(0)..=(center + SINC_HALF).min(h.len() as i64 - 1) {
        let u = n as f64 - delay;
        if u.abs() > half_plus {
            continue;
        }
        let sinc = if u == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u)
        };
        let window = 0.5 * (1.0 + (std::f64::consts::PI * u / half_plus).cos());
        h[n as usize] += amp * sinc * window;
    }
}

/// A rendered acoustic scene: geometry, per-microphone impulse
/// responses, and time-aligned audio frames.
///
/// `received` carries the observation (noisy when `snr_db` is finite);
/// `clean` is the same rendering before noise injection and serves as
/// the reconstruction target. After a disk round-trip `rirs` is empty;
/// everything else survives.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: Room,
    pub source_pos: [f64; 3],
    pub mic_pos: Vec<[f64; 3]>,
    pub source: AudioFrame,
    pub received: Vec<AudioFrame>,
    pub clean: Vec<AudioFrame>,
    pub rirs: Vec<Vec<f64>>,
    pub snr_db: f64,
}

impl Scene {
    pub fn num_mics(&self) -> usize {
        self.mic_pos.len()
    }

    pub fn mic_distance(&self, m: usize) -> f64 {
        dist(self.mic_pos[m], self.source_pos)
    }

    /// Geometric TDOA of microphone `j` relative to `i`, in samples
    /// (positive when `j` is farther from the source).
    pub fn tdoa_samples(&self, i: usize, j: usize) -> f64 {
        (self.mic_distance(j) - self.mic_distance(i)) * SAMPLE_RATE as f64 / SPEED_OF_SOUND
    }

    /// Delay from the source to microphone `m`, in samples.
    pub fn delay_samples(&self, m: usize) -> f64 {
        self.mic_distance(m) * SAMPLE_RATE as f64 / SPEED_OF_SOUND
    }

    /// A copy of the scene restricted to the given microphones, used
    /// when evaluating with fewer known microphones than were recorded.
    pub fn restrict(&self, mic_indices: &[usize]) -> Scene {
        Scene {
            room: self.room,
            source_pos: self.source_pos,
            mic_pos: mic_indices.iter().map(|&m| self.mic_pos[m]).collect(),
            source: self.source.clone(),
            received: mic_indices.iter().map(|&m| self.received[m].clone()).collect(),
            clean: mic_indices.iter().map(|&m| self.clean[m].clone()).collect(),
            rirs: if self.rirs.is_empty() {
                Vec::new()
            } else {
                mic_indices.iter().map(|&m| self.rirs[m].clone()).collect()
            },
            snr_db: self.snr_db,
        }
    }
}

fn fft_convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let out_len = signal.len() + kernel.len() - 1;
    let mut p = 1usize;
    while p < out_len {
        p <<= 1;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(p);
    let ifft = planner.plan_fft_inverse(p);
    let mut fa: Vec<Complex<f64>> = signal.iter().map(|x| Complex::new(*x, 0.0)).collect();
    fa.resize(p, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = kernel.iter().map(|x| Complex::new(*x, 0.0)).collect();
    fb.resize(p, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (a, b) in fa.iter_mut().zip(&fb) {
        *a *= *b;
    }
    ifft.process(&mut fa);
    fa.truncate(out_len);
    fa.iter().map(|c| c.re / p as f64).collect()
}

/// How much impulse-response history the renderer keeps, in samples:
/// enough for the decay to fall roughly 50 dB, and always enough to
/// cover the farthest direct path.
pub fn render_rir_len(room: &Room) -> usize {
    let fs = SAMPLE_RATE as f64;
    let direct = (room.diagonal() * fs / SPEED_OF_SOUND).ceil() as usize;
    if room.reflection_coeff() == 0.0 {
        direct + 2 * SINC_HALF as usize + 4
    } else {
        let decay = (room.t60 * fs * 5.0 / 6.0).ceil() as usize;
        decay.max(direct) + 2 * SINC_HALF as usize + 4
    }
}

/// Renders a scene: convolves the source signal with each microphone's
/// impulse response and injects white noise at `snr_db` (defined against
/// the mean received power across microphones; `inf` for clean scenes).
///
/// The source signal must be at least `rir_len + n_out` samples long;
/// the emitted window starts after a full impulse response of warm-up so
/// every output sample sees steady-state reverberation. The source frame
/// in the scene is the matching window of the raw source signal.
pub fn render_scene(
    room: &Room,
    source_pos: [f64; 3],
    mic_pos: &[[f64; 3]],
    source_signal: &[f64],
    n_out: usize,
    snr_db: f64,
    rng: &mut impl rand::Rng,
) -> Result<Scene, RoomError> {
    render_scene_capped(room, source_pos, mic_pos, source_signal, n_out, snr_db, None, rng)
}

/// Impulse-response length `render_scene_capped` uses for `room` under
/// an optional cap, in samples. The cap never cuts the direct path: the
/// effective length is at least the anechoic length for the room.
pub fn capped_rir_len(room: &Room, max_rir_len: Option<usize>) -> usize {
    let full = render_rir_len(room);
    match max_rir_len {
        None => full,
        Some(cap) => {
            let fs = SAMPLE_RATE as f64;
            let direct = (room.diagonal() * fs / SPEED_OF_SOUND).ceil() as usize
                + 2 * SINC_HALF as usize
                + 4;
            full.min(cap.max(direct))
        }
    }
}

/// [`render_scene`] with an optional ceiling on the impulse-response
/// length. Capping truncates late reverberation: at the default decay
/// target the discarded tail carries under one percent of the response
/// energy once the cap sits 21 dB or more into the decay. Rendering
/// cost grows with the cube of the response length, so sweeps over long
/// reverberation times become tractable with a cap while short rooms
/// are rendered exactly as without one.
#[allow(clippy::too_many_arguments)]
pub fn render_scene_capped(
    room: &Room,
    source_pos: [f64; 3],
    mic_pos: &[[f64; 3]],
    source_signal: &[f64],
    n_out: usize,
    snr_db: f64,
    max_rir_len: Option<usize>,
    rng: &mut impl rand::Rng,
) -> Result<Scene, RoomError> {
    room.check_inside(source_pos)?;
    if mic_pos.is_empty() {
        return Err(RoomError::NoMicrophones);
    }
    for m in mic_pos {
        room.check_inside(*m)?;
    }
    let rir_len = capped_rir_len(room, max_rir_len);
    let need = rir_len + n_out;
    if source_signal.len() < need {
        return Err(RoomError::SourceTooShort { got: source_signal.len(), need });
    }
    let beta = room.reflection_coeff();
    let max_dist = rir_len as f64 / SAMPLE_RATE as f64 * SPEED_OF_SOUND;
    let warmup = rir_len - 1;

    let mut rirs = Vec::with_capacity(mic_pos.len());
    let mut clean = Vec::with_capacity(mic_pos.len());
    for mic in mic_pos {
        let h = rir_capped(room, source_pos, *mic, beta, usize::MAX, max_dist);
        let full = fft_convolve(source_signal, &h);
        let window = full[warmup..warmup + n_out].to_vec();
        clean.push(AudioFrame::new(window, SAMPLE_RATE));
        rirs.push(h);
    }

    let received = if snr_db.is_finite() {
        let mean_power =
            clean.iter().map(|f| f.mean_power()).sum::<f64>() / clean.len() as f64;
        let sigma = (mean_power * 10f64.powf(-snr_db / 10.0)).sqrt();
        let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
        clean
            .iter()
            .map(|f| {
                let samples = f
                    .samples
                    .iter()
                    .map(|x| x + sigma * rand::Rng::sample(rng, normal))
                    .collect();
                AudioFrame::new(samples, SAMPLE_RATE)
            })
            .collect()
    } else {
        clean.clone()
    };

    let source_window = source_signal[warmup..warmup + n_out].to_vec();
    Ok(Scene {
        room: *room,
        source_pos,
        mic_pos: mic_pos.to_vec(),
        source: AudioFrame::new(source_window, SAMPLE_RATE),
        received,
        clean,
        rirs,
        snr_db,
    })
}

mod sampler;
pub use sampler::{
    luvira_catalogue, sample_geometry_compact, sample_geometry_luvira_like,
    sample_geometry_random_faces, GeometrySample, LUVIRA_ROOM_DIMS, LUVIRA_TAU,
};

#[cfg(test)]
mod tests;
