//! Scene datasets: synthetic source material, on-disk storage with a
//! line-oriented index plus per-scene WAV files, time-shift/noise
//! augmentation, and paired condition rendering for sweeps.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pipeline::PipelineError;
use crate::room::{
    capped_rir_len, render_scene_capped, sample_geometry_compact, sample_geometry_luvira_like,
    sample_geometry_random_faces, GeometrySample, Room, Scene,
};
use crate::signal::{
    dequantize_i16, power_gate, quantize_i16, read_wav_mono16, write_wav_mono16, AudioFrame,
};
use crate::{SAMPLE_RATE, SPEED_OF_SOUND};

/// Room dimensions of the 6-microphone simulated benchmark, metres.
pub const DESK_ROOM_DIMS: [f64; 3] = [4.0, 5.0, 2.5];

/// Impulse-response cap for benchmark rendering, samples (0.5 s). Only
/// reverberation times above roughly 0.6 s are affected; the truncated
/// tail then carries under ~3% of the response energy.
pub const DESK_RIR_CAP: usize = 8000;

/// Largest augmentation time shift, samples each way (0.05 s).
pub const DESK_SHIFT_MAX: usize = 800;

/// Source clearance from the walls for face-sampled geometries, metres.
const RF_SOURCE_MARGIN: f64 = 0.4;

/// Microphone inset from its face, metres.
const RF_FACE_OFFSET: f64 = 0.1;

/// Cluster radius for compact-array geometry, metres. The 0.6 m
/// diameter bounds pairwise delays by 28 samples, inside the desk
/// delay classifier's 32-sample window.
const COMPACT_RADIUS: f64 = 0.3;

const MAX_DRAW_ATTEMPTS: usize = 64;

/// Synthetic source material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Modulated low-passed noise with a speech-like long-term spectrum.
    SpeechNoise,
    /// A handful of overlapping band-limited frequency sweeps.
    ChirpMix,
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speech" => Ok(SourceKind::SpeechNoise),
            "chirps" => Ok(SourceKind::ChirpMix),
            other => Err(format!("unknown source kind {other:?} (expected speech or chirps)")),
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::SpeechNoise => "speech",
            SourceKind::ChirpMix => "chirps",
        })
    }
}

/// How scene geometry is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    /// Six microphones, one per room face, in a configurable room.
    RandomFaces,
    /// Six microphones in one 0.3 m-radius cluster, so every pairwise
    /// delay fits a narrow classifier lag window.
    Compact,
    /// The fixed 11-microphone catalogue room.
    LuviraLike,
}

impl FromStr for GeometryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random-faces" => Ok(GeometryKind::RandomFaces),
            "compact" => Ok(GeometryKind::Compact),
            "luvira-like" => Ok(GeometryKind::LuviraLike),
            other => Err(format!(
                "unknown geometry kind {other:?} (expected random-faces, compact, or luvira-like)"
            )),
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryKind::RandomFaces => "random-faces",
            GeometryKind::Compact => "compact",
            GeometryKind::LuviraLike => "luvira-like",
        })
    }
}

/// Build-time knobs for a stored dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: GeometryKind,
    pub count: usize,
    /// Room dimensions for `RandomFaces`; ignored by `LuviraLike`.
    pub dims: [f64; 3],
    pub t60_range: (f64, f64),
    pub source: SourceKind,
    /// Stored frame length per scene, samples. Training wants the model
    /// frame plus a shift margin on each side.
    pub n_out: usize,
    /// Noise level baked into the stored frames; `inf` stores clean
    /// scenes and leaves noise to augmentation or evaluation.
    pub snr_db: f64,
    /// Scenes whose source or any received frame falls below this power
    /// are rejected and redrawn.
    pub power_gate_db: f64,
    pub max_rir_len: Option<usize>,
    pub seed: u64,
}

impl DatasetSpec {
    /// Training material for the 6-microphone benchmark: clean frames
    /// sized for one model window plus the full shift margin.
    pub fn desk_train(count: usize, frame: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: GeometryKind::RandomFaces,
            count,
            dims: DESK_ROOM_DIMS,
            t60_range: (0.15, 0.5),
            source: SourceKind::SpeechNoise,
            n_out: frame + 2 * DESK_SHIFT_MAX,
            snr_db: f64::INFINITY,
            power_gate_db: -65.0,
            max_rir_len: Some(DESK_RIR_CAP),
            seed,
        }
    }

    /// Material for delay-classifier pretraining and its oracle check:
    /// noiseless anechoic scenes whose microphones sit in one compact
    /// cluster, so every pair's true delay fits the desk classifier's
    /// lag window.
    pub fn compact_anechoic(count: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: GeometryKind::Compact,
            count,
            dims: DESK_ROOM_DIMS,
            t60_range: (0.0, 0.0),
            source: SourceKind::SpeechNoise,
            n_out: 1024,
            snr_db: f64::INFINITY,
            power_gate_db: -65.0,
            max_rir_len: None,
            seed,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: &str| PipelineError::Dataset(msg.to_string());
        if self.count == 0 {
            return Err(bad("count must be positive"));
        }
        if self.n_out == 0 {
            return Err(bad("n_out must be positive"));
        }
        if !(self.t60_range.0 >= 0.0 && self.t60_range.1 >= self.t60_range.0) {
            return Err(bad("t60 range must be ordered and non-negative"));
        }
        if self.dims.iter().any(|&d| d <= 0.0 || d.is_nan()) {
            return Err(bad("room dimensions must be positive"));
        }
        Ok(())
    }
}

/// A dataset entry: the scene plus its stable index.
#[derive(Debug, Clone)]
pub struct StoredScene {
    pub id: usize,
    pub scene: Scene,
}

/// Modulated low-passed noise: white noise through a one-pole 500 Hz
/// low-pass (the speech long-term tilt), DC-blocked, with a slow
/// envelope so the signal has syllable-like level swings. RMS 0.2.
pub fn speech_shaped_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
    let a = (-TAU * 500.0 / fs).exp();
    let ae = (-TAU * 3.0 / fs).exp();
    let mut lp = 0.0;
    let mut env = 0.8;
    let mut prev = 0.0;
    let mut dc = 0.0;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let w: f64 = rng.sample(normal);
        let we: f64 = rng.sample(normal);
        lp = a * lp + (1.0 - a) * w;
        env = ae * env + (1.0 - ae) * we.abs();
        dc = lp - prev + 0.995 * dc;
        prev = lp;
        out.push(dc * (0.25 + env));
    }
    normalize_rms(&mut out, 0.2);
    out
}

/// Four overlapping linear frequency sweeps in 200-3800 Hz with random
/// endpoints and phases, plus a little noise. RMS 0.2.
pub fn chirp_mixture(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let t_total = len.max(1) as f64 / fs;
    let chirps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(200.0..3800.0),
                rng.gen_range(200.0..3800.0),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / fs;
        let mut x = 0.0;
        for &(f0, f1, ph, amp) in &chirps {
            x += amp * (ph + TAU * (f0 * t + 0.5 * (f1 - f0) / t_total * t * t)).sin();
        }
        let w: f64 = rng.sample(normal);
        out.push(x + 0.02 * w);
    }
    normalize_rms(&mut out, 0.2);
    out
}

/// Loads user-supplied source material from a 16-bit mono WAV file, so
/// real corpora can stand in for the bundled generators.
pub fn wav_source(path: &Path) -> Result<Vec<f64>, PipelineError> {
    let (samples, rate) = read_wav_mono16(path)?;
    if rate != SAMPLE_RATE {
        return Err(PipelineError::Dataset(format!(
            "{} is sampled at {rate} Hz, expected {SAMPLE_RATE}",
            path.display()
        )));
    }
    Ok(samples.into_iter().map(dequantize_i16).collect())
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let p: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if p > 0.0 {
        let g = target / p.sqrt();
        for v in x {
            *v *= g;
        }
    }
}

fn generate_source(kind: SourceKind, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    match kind {
        SourceKind::SpeechNoise => speech_shaped_noise(len, rng),
        SourceKind::ChirpMix => chirp_mixture(len, rng),
    }
}

fn sample_geometry(
    spec: &DatasetSpec,
    rng: &mut impl Rng,
) -> Result<GeometrySample, PipelineError> {
    Ok(match spec.kind {
        GeometryKind::RandomFaces => sample_geometry_random_faces(
            spec.dims,
            spec.t60_range,
            RF_SOURCE_MARGIN,
            RF_FACE_OFFSET,
            rng,
        )?,
        GeometryKind::Compact => sample_geometry_compact(
            spec.dims,
            spec.t60_range,
            COMPACT_RADIUS,
            RF_SOURCE_MARGIN,
            rng,
        )?,
        GeometryKind::LuviraLike => sample_geometry_luvira_like(rng),
    })
}

/// Renders `spec.count` scenes in memory. Scene `i` draws from its own
/// seeded stream, so any subset regenerates identically and rejection
/// of one scene cannot shift its neighbours.
pub fn render_dataset(spec: &DatasetSpec) -> Result<Vec<StoredScene>, PipelineError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + i as u64);
        let mut scene = None;
        for _ in 0..MAX_DRAW_ATTEMPTS {
            let g = sample_geometry(spec, &mut rng)?;
            let need = capped_rir_len(&g.room, spec.max_rir_len) + spec.n_out;
            let src = generate_source(spec.source, need, &mut rng);
            let s = render_scene_capped(
                &g.room,
                g.source_pos,
                &g.mic_pos,
                &src,
                spec.n_out,
                spec.snr_db,
                spec.max_rir_len,
                &mut rng,
            )?;
            let loud = power_gate(&s.source, spec.power_gate_db)
                && s.received.iter().all(|f| power_gate(f, spec.power_gate_db));
            if loud {
                scene = Some(s);
                break;
            }
        }
        let scene = scene.ok_or_else(|| {
            PipelineError::Dataset(format!(
                "scene {i}: power gate at {} dB rejected {MAX_DRAW_ATTEMPTS} consecutive draws",
                spec.power_gate_db
            ))
        })?;
        out.push(StoredScene { id: i, scene });
    }
    Ok(out)
}

/// Renders and stores a dataset; returns the scenes for further use.
pub fn build_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Vec<StoredScene>, PipelineError> {
    let scenes = render_dataset(spec)?;
    save_dataset(dir, &scenes)?;
    Ok(scenes)
}

fn wav_names(id: usize, mics: usize) -> (String, Vec<String>) {
    let src = format!("scene_{id:05}.src.wav");
    let mics = (0..mics).map(|m| format!("scene_{id:05}.m{m}.wav")).collect();
    (src, mics)
}

/// Writes `index.txt` plus one WAV per source and microphone. Each
/// index line holds `id`, room dimensions, t60, SNR, source position,
/// microphone count, the microphone positions, and the quantization
/// gain applied before the 16-bit conversion. Floats use the shortest
/// representation that parses back to the identical value, so a
/// load/save cycle is byte-identical.
pub fn save_dataset(dir: &Path, scenes: &[StoredScene]) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for s in scenes {
        let scene = &s.scene;
        let peak = scene
            .received
            .iter()
            .chain(std::iter::once(&scene.source))
            .flat_map(|f| f.samples.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let gain = if peak > 0.0 { 0.999 / peak } else { 1.0 };

        use std::fmt::Write as _;
        let d = scene.room.dims;
        write!(index, "{} {} {} {} {}", s.id, d[0], d[1], d[2], scene.room.t60).unwrap();
        write!(index, " {}", scene.snr_db).unwrap();
        let p = scene.source_pos;
        write!(index, " {} {} {}", p[0], p[1], p[2]).unwrap();
        write!(index, " {}", scene.num_mics()).unwrap();
        for m in &scene.mic_pos {
            write!(index, " {} {} {}", m[0], m[1], m[2]).unwrap();
        }
        writeln!(index, " {gain}").unwrap();

        let (src_name, mic_names) = wav_names(s.id, scene.num_mics());
        let quantized =
            |f: &AudioFrame| f.samples.iter().map(|&x| quantize_i16(x * gain)).collect::<Vec<_>>();
        write_wav_mono16(&dir.join(src_name), &quantized(&scene.source), SAMPLE_RATE)?;
        for (name, frame) in mic_names.iter().zip(&scene.received) {
            write_wav_mono16(&dir.join(name), &quantized(frame), SAMPLE_RATE)?;
        }
    }
    std::fs::write(dir.join("index.txt"), index)?;
    Ok(())
}

/// Reads a dataset directory written by [`save_dataset`]. Impulse
/// responses are not stored, so `rirs` comes back empty, and the stored
/// frames stand in for both `received` and `clean`.
pub fn load_dataset(dir: &Path) -> Result<Vec<StoredScene>, PipelineError> {
    let index = std::fs::read_to_string(dir.join("index.txt"))?;
    let mut out = Vec::new();
    for (lineno, line) in index.lines().enumerate() {
        let bad = |msg: String| {
            PipelineError::Dataset(format!("index.txt line {}: {msg}", lineno + 1))
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 11 {
            return Err(bad(format!("expected at least 11 fields, got {}", tok.len())));
        }
        let f = |i: usize| -> Result<f64, PipelineError> {
            tok[i].parse::<f64>().map_err(|e| bad(format!("field {}: {e}", i + 1)))
        };
        let id: usize = tok[0].parse().map_err(|e| bad(format!("id: {e}")))?;
        let dims = [f(1)?, f(2)?, f(3)?];
        let t60 = f(4)?;
        let snr_db = f(5)?;
        let source_pos = [f(6)?, f(7)?, f(8)?];
        let mics: usize = tok[9].parse().map_err(|e| bad(format!("mic count: {e}")))?;
        if tok.len() != 11 + 3 * mics {
            return Err(bad(format!("expected {} fields for {mics} mics, got {}", 11 + 3 * mics, tok.len())));
        }
        let mut mic_pos = Vec::with_capacity(mics);
        for m in 0..mics {
            mic_pos.push([f(10 + 3 * m)?, f(11 + 3 * m)?, f(12 + 3 * m)?]);
        }
        let gain = f(10 + 3 * mics)?;
        if gain <= 0.0 || gain.is_nan() {
            return Err(bad(format!("gain must be positive, got {gain}")));
        }

        let (src_name, mic_names) = wav_names(id, mics);
        let read_frame = |name: &str| -> Result<AudioFrame, PipelineError> {
            let (samples, rate) = read_wav_mono16(&dir.join(name))?;
            if rate != SAMPLE_RATE {
                return Err(PipelineError::Dataset(format!(
                    "{name}: sampled at {rate} Hz, expected {SAMPLE_RATE}"
                )));
            }
            Ok(AudioFrame::new(
                samples.into_iter().map(|q| dequantize_i16(q) / gain).collect(),
                SAMPLE_RATE,
            ))
        };
        let source = read_frame(&src_name)?;
        let received: Vec<AudioFrame> =
            mic_names.iter().map(|n| read_frame(n)).collect::<Result<_, _>>()?;

        out.push(StoredScene {
            id,
            scene: Scene {
                room: Room::new(dims, t60)?,
                source_pos,
                mic_pos,
                source,
                clean: received.clone(),
                received,
                rirs: Vec::new(),
                snr_db,
            },
        });
    }
    Ok(out)
}

/// Cuts an `n_out`-sample window `shift` samples off-centre out of every
/// frame of the scene (the same cut for all channels, so pairwise
/// timing is untouched), then adds white noise to the received frames
/// at `snr_db` against the mean clean power. Ground truth is unchanged.
pub fn augment_scene(
    scene: &Scene,
    n_out: usize,
    shift: i64,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<Scene, PipelineError> {
    let len = scene.source.len();
    if n_out == 0 || len < n_out {
        return Err(PipelineError::InsufficientMargin { len, n_out, shift });
    }
    let lo = ((len - n_out) / 2) as i64 + shift;
    if lo < 0 || lo as usize + n_out > len {
        return Err(PipelineError::InsufficientMargin { len, n_out, shift });
    }
    let lo = lo as usize;
    let cut = |f: &AudioFrame| AudioFrame::new(f.samples[lo..lo + n_out].to_vec(), f.sample_rate);

    let clean: Vec<AudioFrame> = scene.clean.iter().map(cut).collect();
    let mut received: Vec<AudioFrame> = scene.received.iter().map(cut).collect();
    if snr_db.is_finite() {
        let mean_power =
            clean.iter().map(|f| f.mean_power()).sum::<f64>() / clean.len().max(1) as f64;
        let sigma = (mean_power * 10f64.powf(-snr_db / 10.0)).sqrt();
        let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
        for f in &mut received {
            for x in &mut f.samples {
                *x += sigma * rng.sample(normal);
            }
        }
    }
    Ok(Scene {
        room: scene.room,
        source_pos: scene.source_pos,
        mic_pos: scene.mic_pos.clone(),
        source: cut(&scene.source),
        received,
        clean,
        rirs: scene.rirs.clone(),
        snr_db: snr_db.min(scene.snr_db),
    })
}

/// [`augment_scene`] with the shift drawn uniformly in
/// `[-max_shift, max_shift]` and the SNR uniformly over `snr_range_db`
/// (no noise when the range starts at infinity).
pub fn random_augment(
    scene: &Scene,
    n_out: usize,
    max_shift: usize,
    snr_range_db: (f64, f64),
    rng: &mut impl Rng,
) -> Result<Scene, PipelineError> {
    let shift = if max_shift == 0 {
        0
    } else {
        rng.gen_range(-(max_shift as i64)..=max_shift as i64)
    };
    let snr = if snr_range_db.0.is_finite() {
        rng.gen_range(snr_range_db.0..=snr_range_db.1)
    } else {
        f64::INFINITY
    };
    augment_scene(scene, n_out, shift, snr, rng)
}

/// Knobs for paired condition rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSpec {
    pub dims: [f64; 3],
    pub count: usize,
    pub n_out: usize,
    pub source: SourceKind,
    pub max_rir_len: usize,
    pub seed: u64,
}

/// Renders face-sampled scenes at one `(t60, snr)` condition such that
/// every condition rendered from the same spec shares geometry and
/// source signals scene for scene. Sweeps over conditions then measure
/// the condition, not sampling noise. No power gating here: rejection
/// could keep different scenes under different conditions and break the
/// pairing.
pub fn render_condition(
    spec: &ConditionSpec,
    t60: f64,
    snr_db: f64,
) -> Result<Vec<Scene>, PipelineError> {
    if spec.count == 0 || spec.n_out == 0 {
        return Err(PipelineError::Dataset("count and n_out must be positive".into()));
    }
    // Source length for the worst case over all conditions, so the
    // generated signal is identical no matter the t60 requested.
    let worst = Room::new(spec.dims, 9.0)?;
    let src_len = capped_rir_len(&worst, Some(spec.max_rir_len)) + spec.n_out;

    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + i as u64);
        let g = sample_geometry_random_faces(
            spec.dims,
            (0.2, 0.3),
            RF_SOURCE_MARGIN,
            RF_FACE_OFFSET,
            &mut rng,
        )?;
        let room = Room::new(spec.dims, t60)?;
        let src = generate_source(spec.source, src_len, &mut rng);
        out.push(render_scene_capped(
            &room,
            g.source_pos,
            &g.mic_pos,
            &src,
            spec.n_out,
            snr_db,
            Some(spec.max_rir_len),
            &mut rng,
        )?);
    }
    Ok(out)
}

/// The correlation span needed to cover every possible delay in `room`,
/// in samples: the room diagonal plus one sample of slack.
pub fn room_tau(room_dims: [f64; 3]) -> usize {
    let diag = (room_dims[0].powi(2) + room_dims[1].powi(2) + room_dims[2].powi(2)).sqrt();
    (diag * SAMPLE_RATE as f64 / SPEED_OF_SOUND).ceil() as usize + 1
}
