//! Scene geometry samplers for the two bundled benchmarks.

use super::{Room, RoomError};
use rand::Rng;

/// Correlation window half-width reserved for the fixed-catalogue
/// benchmark, in samples.
pub const LUVIRA_TAU: usize = 314;

/// Room used by the fixed-catalogue benchmark, metres.
pub const LUVIRA_ROOM_DIMS: [f64; 3] = [7.0, 8.0, 2.0];

/// Sampled scene geometry, before any audio is rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySample {
    pub room: Room,
    pub source_pos: [f64; 3],
    pub mic_pos: Vec<[f64; 3]>,
}

/// The fixed 11-microphone catalogue (coarse positions, metres).
pub fn luvira_catalogue() -> Vec<[f64; 3]> {
    let text = include_str!("../../data/luvira_mics.txt");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(|t| t.parse::<f64>().unwrap());
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        })
        .collect()
}

fn sample_t60(t60_range: (f64, f64), rng: &mut impl Rng) -> f64 {
    if t60_range.0 == t60_range.1 {
        return t60_range.0;
    }
    loop {
        let t = rng.gen_range(t60_range.0..t60_range.1);
        if t > 0.0 || t60_range.0 < 0.0 {
            return t;
        }
    }
}

fn sample_interior(dims: [f64; 3], margin: f64, rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.gen_range(margin..dims[0] - margin),
        rng.gen_range(margin..dims[1] - margin),
        rng.gen_range(margin..dims[2] - margin),
    ]
}

/// One microphone per room face, uniform over the face and offset
/// `face_offset` metres inward along the face normal; source uniform in
/// the interior with `source_margin` clearance. `t60` uniform over
/// `t60_range` (zero excluded when the range touches it).
pub fn sample_geometry_random_faces(
    dims: [f64; 3],
    t60_range: (f64, f64),
    source_margin: f64,
    face_offset: f64,
    rng: &mut impl Rng,
) -> Result<GeometrySample, RoomError> {
    let room = Room::new(dims, sample_t60(t60_range, rng))?;
    let [lx, ly, lz] = dims;
    let o = face_offset;
    let mic_pos = vec![
        [rng.gen_range(0.0..lx), rng.gen_range(0.0..ly), o],
        [rng.gen_range(0.0..lx), rng.gen_range(0.0..ly), lz - o],
        [o, rng.gen_range(0.0..ly), rng.gen_range(0.0..lz)],
        [lx - o, rng.gen_range(0.0..ly), rng.gen_range(0.0..lz)],
        [rng.gen_range(0.0..lx), o, rng.gen_range(0.0..lz)],
        [rng.gen_range(0.0..lx), ly - o, rng.gen_range(0.0..lz)],
    ];
    let source_pos = sample_interior(dims, source_margin, rng);
    Ok(GeometrySample { room, source_pos, mic_pos })
}

/// Six microphones in one compact cluster: a center drawn in the
/// interior with `cluster_radius` clearance from every wall, then six
/// points uniform in the ball of that radius around it. Keeps every
/// pairwise time difference at most `2 * cluster_radius / c` seconds,
/// which suits a delay classifier with a narrow lag window. Source
/// uniform in the interior with `source_margin` clearance.
pub fn sample_geometry_compact(
    dims: [f64; 3],
    t60_range: (f64, f64),
    cluster_radius: f64,
    source_margin: f64,
    rng: &mut impl Rng,
) -> Result<GeometrySample, RoomError> {
    let room = Room::new(dims, sample_t60(t60_range, rng))?;
    let center = sample_interior(dims, cluster_radius + 0.05, rng);
    let mut mic_pos = Vec::with_capacity(6);
    while mic_pos.len() < 6 {
        let p = [
            rng.gen_range(-cluster_radius..cluster_radius),
            rng.gen_range(-cluster_radius..cluster_radius),
            rng.gen_range(-cluster_radius..cluster_radius),
        ];
        if p.iter().map(|v| v * v).sum::<f64>() <= cluster_radius * cluster_radius {
            mic_pos.push([center[0] + p[0], center[1] + p[1], center[2] + p[2]]);
        }
    }
    let source_pos = sample_interior(dims, source_margin, rng);
    Ok(GeometrySample { room, source_pos, mic_pos })
}

/// The fixed-catalogue geometry: 11 catalogue microphones in the
/// 7 x 8 x 2 room, source uniform in the interior with 0.3 m margin,
/// `t60` uniform in (0, 0.4).
pub fn sample_geometry_luvira_like(rng: &mut impl Rng) -> GeometrySample {
    let room = Room::new(LUVIRA_ROOM_DIMS, sample_t60((0.0, 0.4), rng)).unwrap();
    GeometrySample {
        room,
        source_pos: sample_interior(LUVIRA_ROOM_DIMS, 0.3, rng),
        mic_pos: luvira_catalogue(),
    }
}
