use super::*;
use crate::signal::gcc_phat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();
    (0..n).map(|_| rand::Rng::sample(rng, normal)).collect()
}

/// Random-phase multisine, periodic over `period`, with unit RMS and all
/// content below 0.7x Nyquist. Every `period`-long window of it carries
/// the same energy, and the band stays clear of the fractional-delay
/// interpolator's rolloff near Nyquist.
fn multisine(rng: &mut ChaCha8Rng, period: usize, len: usize) -> Vec<f64> {
    let k_max = (0.7 * period as f64 / 2.0) as usize;
    let phases: Vec<f64> = (0..k_max)
        .map(|_| rand::Rng::gen_range(rng, 0.0..std::f64::consts::TAU))
        .collect();
    let scale = (2.0 / k_max as f64).sqrt();
    let one_period: Vec<f64> = (0..period)
        .map(|t| {
            let base = std::f64::consts::TAU * t as f64 / period as f64;
            let acc: f64 = phases
                .iter()
                .enumerate()
                .map(|(i, ph)| ((i + 1) as f64 * base + ph).cos())
                .sum();
            scale * acc
        })
        .collect();
    (0..len).map(|t| one_period[t % period]).collect()
}

#[test]
fn sabine_alpha_matches_frozen_values() {
    let r = Room::new([7.0, 8.0, 2.0], 0.3).unwrap();
    assert!((r.sabine_alpha() - 0.34945736434108526).abs() < 1e-12);
    let r = Room::new([2.0, 2.0, 2.0], 0.3).unwrap();
    assert!((r.sabine_alpha() - 0.1788888888888889).abs() < 1e-12);
    // Below the absorption-limited minimum the coefficient saturates.
    let r = Room::new([7.0, 8.0, 2.0], 0.1).unwrap();
    assert_eq!(r.sabine_alpha(), 1.0);
    assert_eq!(r.reflection_coeff(), 0.0);
}

#[test]
fn anechoic_direct_path_is_a_single_exact_tap() {
    let room = Room::new([7.0, 8.0, 2.0], 0.0).unwrap();
    // 3.43 m is exactly 160 samples at 16 kHz / 343 m/s.
    let h = simulate_rir(&room, [1.0, 1.0, 1.0], [4.43, 1.0, 1.0], 0).unwrap();
    let expected_amp = 0.023200429022142175;
    assert!((h[160] - expected_amp).abs() < 1e-12);
    let nonzero = h.iter().filter(|v| v.abs() > 1e-12).count();
    assert_eq!(nonzero, 1, "integer delay must collapse to one tap");
}

#[test]
fn doubling_distance_halves_the_direct_amplitude() {
    let room = Room::new([10.0, 4.0, 3.0], 0.0).unwrap();
    let h1 = simulate_rir(&room, [1.0, 2.0, 1.5], [2.715, 2.0, 1.5], 0).unwrap();
    let h2 = simulate_rir(&room, [1.0, 2.0, 1.5], [4.43, 2.0, 1.5], 0).unwrap();
    let p1: f64 = h1.iter().cloned().fold(0.0, f64::max);
    let p2: f64 = h2.iter().cloned().fold(0.0, f64::max);
    assert!((p1 / p2 - 2.0).abs() < 1e-6, "ratio {}", p1 / p2);
}

/// Backward-integrated energy decay, fitted between -5 and -35 dB and
/// extrapolated to -60 dB.
///
/// The response is DC-blocked first (pole at 0.98, cutoff ~50 Hz):
/// every image tap shares the sign of the reflection coefficient, so
/// the dense late field piles up a near-DC component that no
/// band-limited measurement would see and that would otherwise dominate
/// the energy integral.
fn schroeder_t60(h: &[f64]) -> f64 {
    let mut filtered = vec![0.0; h.len()];
    let (mut px, mut py) = (0.0, 0.0);
    for (i, &x) in h.iter().enumerate() {
        filtered[i] = x - px + 0.98 * py;
        px = x;
        py = filtered[i];
    }
    let mut energy: Vec<f64> = filtered.iter().map(|x| x * x).collect();
    for i in (0..energy.len() - 1).rev() {
        energy[i] += energy[i + 1];
    }
    let e0 = energy[0];
    let db: Vec<f64> = energy.iter().map(|e| 10.0 * (e / e0).log10()).collect();
    let t5 = db.iter().position(|d| *d <= -5.0).unwrap();
    let t35 = db.iter().position(|d| *d <= -35.0).unwrap();
    2.0 * (t35 - t5) as f64 / crate::SAMPLE_RATE as f64
}

#[test]
fn reverberant_rir_decays_at_the_requested_rate() {
    let room = Room::new([2.0, 2.0, 2.0], 0.3).unwrap();
    // Enough reflection orders for the decay to cover 1.5x the target.
    let order = (1.5 * SPEED_OF_SOUND * 0.3 / 2.0).ceil() as usize + 2;
    let h = simulate_rir(&room, [0.6, 1.1, 0.7], [1.5, 0.9, 1.4], order).unwrap();
    let measured = schroeder_t60(&h);
    assert!(
        (measured - 0.3).abs() / 0.3 < 0.2,
        "measured t60 {measured}, wanted 0.3 +- 20%"
    );
}

#[test]
fn positions_outside_the_room_are_rejected() {
    let room = Room::new([4.0, 4.0, 2.0], 0.2).unwrap();
    assert!(matches!(
        simulate_rir(&room, [5.0, 1.0, 1.0], [1.0, 1.0, 1.0], 1),
        Err(RoomError::OutsideRoom { .. })
    ));
    assert!(matches!(
        simulate_rir(&room, [1.0, 1.0, 1.0], [1.0, -0.1, 1.0], 1),
        Err(RoomError::OutsideRoom { .. })
    ));
    assert!(Room::new([0.0, 1.0, 1.0], 0.2).is_err());
    assert!(Room::new([1.0, 1.0, 1.0], -0.5).is_err());
}

#[test]
fn rendered_window_reproduces_an_integer_delay_exactly() {
    let room = Room::new([7.0, 8.0, 2.0], 0.0).unwrap();
    let src = [1.0, 1.0, 1.0];
    let mic = [1.0 + 2.14375, 1.0, 1.0]; // exactly 100 samples away
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n_out = 2048;
    let signal = white(&mut rng, 4096);
    let scene =
        render_scene(&room, src, &[mic], &signal, n_out, f64::INFINITY, &mut rng).unwrap();
    let amp = 1.0 / (4.0 * std::f64::consts::PI * 2.14375);
    let warmup = render_rir_len(&room) - 1;
    for n in 0..n_out {
        let expected = amp * signal[warmup + n - 100];
        assert!((scene.received[0].samples[n] - expected).abs() < 1e-10);
    }
    // The source frame is the aligned window of the raw signal.
    assert_eq!(scene.source.samples.as_slice(), &signal[warmup..warmup + n_out]);
}

#[test]
fn received_energy_follows_spherical_spreading() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let room = Room::new([7.0, 8.0, 2.0], 0.0).unwrap();
    let n_out = 8192;
    let signal = multisine(&mut rng, n_out, n_out + 1024);
    for _ in 0..5 {
        let g = sample_geometry_random_faces([7.0, 8.0, 2.0], (0.0, 0.0), 0.5, 0.05, &mut rng)
            .unwrap();
        let scene = render_scene(
            &room,
            g.source_pos,
            &g.mic_pos,
            &signal,
            n_out,
            f64::INFINITY,
            &mut rng,
        )
        .unwrap();
        let src_norm = scene.source.mean_power().sqrt();
        for m in 0..scene.num_mics() {
            let expected = src_norm / (4.0 * std::f64::consts::PI * scene.mic_distance(m));
            let got = scene.received[m].mean_power().sqrt();
            assert!(
                (got / expected - 1.0).abs() < 0.01,
                "mic {m}: norm ratio {}",
                got / expected
            );
        }
    }
}

#[test]
fn gcc_phat_recovers_geometric_tdoas_in_quiet_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let n_out = 2048;
    let tau = max_delay_samples([7.0, 8.0, 2.0]);
    let mut total = 0usize;
    let mut exact = 0usize;
    for _ in 0..100 {
        let g = sample_geometry_random_faces([7.0, 8.0, 2.0], (0.0, 0.0), 0.5, 0.05, &mut rng)
            .unwrap();
        let signal = white(&mut rng, n_out + 1024);
        let scene =
            render_scene(&g.room, g.source_pos, &g.mic_pos, &signal, n_out, 20.0, &mut rng)
                .unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let corr = gcc_phat(&scene.received[i], &scene.received[j], tau).unwrap();
                total += 1;
                if corr.argmax_lag() == scene.tdoa_samples(i, j).round() as i64 {
                    exact += 1;
                }
            }
        }
    }
    assert!(
        exact as f64 / total as f64 >= 0.95,
        "only {exact}/{total} pairs matched the geometric TDOA"
    );
}

#[test]
fn noiseless_anechoic_tdoas_are_exact_away_from_rounding_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let n_out = 2048;
    let tau = max_delay_samples([7.0, 8.0, 2.0]);
    let mut checked = 0usize;
    for _ in 0..30 {
        let g = sample_geometry_random_faces([7.0, 8.0, 2.0], (0.0, 0.0), 0.5, 0.05, &mut rng)
            .unwrap();
        let signal = white(&mut rng, n_out + 1024);
        let scene = render_scene(
            &g.room,
            g.source_pos,
            &g.mic_pos,
            &signal,
            n_out,
            f64::INFINITY,
            &mut rng,
        )
        .unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let t = scene.tdoa_samples(i, j);
                // Half-integer TDOAs are quantization ties; either
                // neighbour is a legitimate argmax there.
                if (t.fract().abs() - 0.5).abs() < 0.02 {
                    continue;
                }
                let corr = gcc_phat(&scene.received[i], &scene.received[j], tau).unwrap();
                assert_eq!(
                    corr.argmax_lag(),
                    t.round() as i64,
                    "scene tdoa {t} not recovered"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 300, "tie filter removed too many pairs ({checked} left)");
}

#[test]
fn rendered_noise_hits_the_scene_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let g =
        sample_geometry_random_faces([7.0, 8.0, 2.0], (0.0, 0.0), 0.5, 0.05, &mut rng).unwrap();
    let signal = white(&mut rng, 9000);
    let scene =
        render_scene(&g.room, g.source_pos, &g.mic_pos, &signal, 8192, 10.0, &mut rng).unwrap();
    let sig: f64 = scene.clean.iter().map(|f| f.mean_power()).sum();
    let noise: f64 = scene
        .clean
        .iter()
        .zip(&scene.received)
        .map(|(c, n)| {
            c.samples
                .iter()
                .zip(&n.samples)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / c.len() as f64
        })
        .sum();
    let measured = 10.0 * (sig / noise).log10();
    assert!((measured - 10.0).abs() < 0.3, "aggregate snr {measured}");
}

#[test]
fn rendering_is_deterministic_for_a_fixed_seed() {
    let room = Room::new([5.0, 6.0, 2.5], 0.25).unwrap();
    let src = [2.0, 3.0, 1.2];
    let mics = [[0.5, 0.5, 0.5], [4.5, 5.5, 2.0]];
    let mut rng1 = ChaCha8Rng::seed_from_u64(61);
    let signal = white(&mut rng1, 10_000);
    let mut ra = ChaCha8Rng::seed_from_u64(62);
    let mut rb = ChaCha8Rng::seed_from_u64(62);
    let a = render_scene(&room, src, &mics, &signal, 2048, 15.0, &mut ra).unwrap();
    let b = render_scene(&room, src, &mics, &signal, 2048, 15.0, &mut rb).unwrap();
    assert_eq!(a, b);
}

#[test]
fn face_sampler_is_uniform_and_respects_margins() {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let n = 1000;
    let mut floor_x = Vec::with_capacity(n);
    let mut west_y = Vec::with_capacity(n);
    for _ in 0..n {
        let g = sample_geometry_random_faces([7.0, 8.0, 2.0], (0.0, 0.4), 0.3, 0.05, &mut rng)
            .unwrap();
        assert!(g.room.t60 > 0.0 && g.room.t60 < 0.4);
        assert_eq!(g.mic_pos.len(), 6);
        assert_eq!(g.mic_pos[0][2], 0.05, "floor mic sits 5 cm off the floor");
        for p in &g.mic_pos {
            assert!(g.room.contains(*p));
        }
        for d in 0..3 {
            assert!(g.source_pos[d] >= 0.3 && g.source_pos[d] <= g.room.dims[d] - 0.3);
        }
        floor_x.push(g.mic_pos[0][0] / 7.0);
        west_y.push(g.mic_pos[2][1] / 8.0);
    }
    // One-sample Kolmogorov-Smirnov against U(0,1), alpha = 0.01.
    let crit = 1.63 / (n as f64).sqrt();
    for (name, mut xs) in [("floor x", floor_x), ("west y", west_y)] {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (x - lo).abs().max((x - hi).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(d < crit, "{name}: KS statistic {d} over critical {crit}");
    }
}

#[test]
fn luvira_catalogue_matches_its_reserved_window() {
    let mics = luvira_catalogue();
    assert_eq!(mics.len(), 11);
    let room = Room::new(LUVIRA_ROOM_DIMS, 0.2).unwrap();
    let mut max_pair = 0.0f64;
    for (i, a) in mics.iter().enumerate() {
        assert!(room.contains(*a));
        for b in &mics[i + 1..] {
            max_pair = max_pair.max(dist(*a, *b));
        }
    }
    let max_lag = max_pair * crate::SAMPLE_RATE as f64 / SPEED_OF_SOUND;
    assert!(
        max_lag <= LUVIRA_TAU as f64,
        "catalogue TDOAs ({max_lag} samples) exceed the reserved window"
    );

    let mut r1 = ChaCha8Rng::seed_from_u64(71);
    let mut r2 = ChaCha8Rng::seed_from_u64(71);
    let a = sample_geometry_luvira_like(&mut r1);
    let b = sample_geometry_luvira_like(&mut r2);
    assert_eq!(a, b);
    assert!(a.room.t60 > 0.0 && a.room.t60 < 0.4);
}

#[test]
fn room_diagonal_sets_the_correlation_window() {
    assert_eq!(max_delay_samples([7.0, 8.0, 2.0]), 505);
}

#[test]
fn restricting_a_scene_keeps_the_selected_microphones() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let g =
        sample_geometry_random_faces([7.0, 8.0, 2.0], (0.0, 0.0), 0.5, 0.05, &mut rng).unwrap();
    let signal = white(&mut rng, 3000);
    let scene = render_scene(
        &g.room,
        g.source_pos,
        &g.mic_pos,
        &signal,
        2048,
        f64::INFINITY,
        &mut rng,
    )
    .unwrap();
    let sub = scene.restrict(&[0, 2, 5]);
    assert_eq!(sub.num_mics(), 3);
    assert_eq!(sub.mic_pos[1], scene.mic_pos[2]);
    assert_eq!(sub.received[2], scene.received[5]);
    assert_eq!(sub.source, scene.source);
}

#[test]
fn capping_the_response_keeps_nearly_all_its_energy() {
    let room = Room::new([4.0, 5.0, 2.5], 0.8).unwrap();
    let cap = 8000;
    assert_eq!(capped_rir_len(&room, Some(cap)), cap);
    assert_eq!(capped_rir_len(&room, None), render_rir_len(&room));
    // A cap below the direct-path length is raised to cover it.
    let floor = capped_rir_len(&room, Some(1));
    let direct = (room.diagonal() * SAMPLE_RATE as f64 / SPEED_OF_SOUND).ceil() as usize;
    assert!(floor > direct);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let signal = white(&mut rng, render_rir_len(&room) + 600);
    let full = render_scene(&room, [1.2, 2.0, 1.1], &[[3.1, 4.2, 0.4]], &signal, 512, f64::INFINITY, &mut rng)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let signal = white(&mut rng, render_rir_len(&room) + 600);
    let capped = render_scene_capped(
        &room,
        [1.2, 2.0, 1.1],
        &[[3.1, 4.2, 0.4]],
        &signal,
        512,
        f64::INFINITY,
        Some(cap),
        &mut rng,
    )
    .unwrap();
    assert!(capped.rirs[0].len() <= cap + SINC_HALF as usize + 2);
    assert!(capped.rirs[0].len() < full.rirs[0].len());
    let energy = |h: &[f64]| h.iter().map(|x| x * x).sum::<f64>();
    let kept = energy(&capped.rirs[0]) / energy(&full.rirs[0]);
    assert!(kept > 0.99, "capped response kept only {kept:.4} of the energy");

    // An anechoic room is unaffected by any cap at or above its length.
    let open = Room::new([4.0, 5.0, 2.5], 0.0).unwrap();
    assert_eq!(capped_rir_len(&open, Some(100_000)), render_rir_len(&open));
}

