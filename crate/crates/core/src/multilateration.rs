//! Classical TDOA source localization: correlation peak extraction,
//! damped Gauss-Newton least squares, and RANSAC over ranked peak
//! candidates for outlier-contaminated delay sets.

use crate::signal::CorrelationVector;
use crate::{SAMPLE_RATE, SPEED_OF_SOUND};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MultilatError {
    #[error("need measurements over at least 5 distinct microphones, got {0}")]
    InsufficientMeasurements(usize),
    #[error("microphone index {0} out of range for {1} microphones")]
    BadMicIndex(usize, usize),
    #[error("no candidate delays supplied for pair ({0}, {1})")]
    EmptyCandidates(usize, usize),
    #[error("no RANSAC hypothesis reached {needed} inliers (best was {best})")]
    NoConsensus { needed: usize, best: usize },
}

/// A refined correlation peak: `lag` is in (fractional) samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub lag: f64,
    pub value: f64,
}

/// Top-`k` local maxima of a correlation vector, strongest first, with
/// parabolic sub-sample refinement around each peak.
pub fn extract_peaks(corr: &CorrelationVector, k: usize) -> Vec<Peak> {
    let v = &corr.values;
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for i in 1..v.len().saturating_sub(1) {
        if v[i] > v[i - 1] && v[i] >= v[i + 1] {
            peaks.push((i, v[i]));
        }
    }
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    peaks
        .into_iter()
        .take(k)
        .map(|(i, y1)| {
            let (y0, y2) = (v[i - 1], v[i + 1]);
            let denom = y0 - 2.0 * y1 + y2;
            let offset = if denom.abs() < 1e-30 { 0.0 } else { 0.5 * (y0 - y2) / denom };
            Peak { lag: corr.lag_at(i) as f64 + offset.clamp(-0.5, 0.5), value: y1 }
        })
        .collect()
}

/// One relative-delay measurement: microphone `mic_j` receives the
/// source `delay_s` seconds after `mic_i` (negative when it leads).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaMeasurement {
    pub mic_i: usize,
    pub mic_j: usize,
    pub delay_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationResult {
    pub position: [f64; 3],
    /// Root-mean-square of the range-difference residuals, metres.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn check_measurements(
    measurements: &[TdoaMeasurement],
    mics: &[[f64; 3]],
) -> Result<(), MultilatError> {
    let mut seen = std::collections::BTreeSet::new();
    for m in measurements {
        for idx in [m.mic_i, m.mic_j] {
            if idx >= mics.len() {
                return Err(MultilatError::BadMicIndex(idx, mics.len()));
            }
            seen.insert(idx);
        }
    }
    if seen.len() < 5 || measurements.len() < 4 {
        return Err(MultilatError::InsufficientMeasurements(seen.len()));
    }
    Ok(())
}

fn residuals(x: [f64; 3], measurements: &[TdoaMeasurement], mics: &[[f64; 3]]) -> Vec<f64> {
    measurements
        .iter()
        .map(|m| {
            norm3(sub3(mics[m.mic_j], x)) - norm3(sub3(mics[m.mic_i], x))
                - SPEED_OF_SOUND * m.delay_s
        })
        .collect()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (entry, p) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                *entry -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in (row + 1)..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Levenberg-Marquardt least squares over range-difference residuals
/// `|r_j - x| - |r_i - x| - c * delay`. Starts from the microphone
/// centroid unless an initial guess is given. Convergence means the
/// gradient norm fell below 1e-9 or the step below 1e-10 within 100
/// iterations.
pub fn solve_tdoa_ls(
    measurements: &[TdoaMeasurement],
    mics: &[[f64; 3]],
    init: Option<[f64; 3]>,
) -> Result<LocalizationResult, MultilatError> {
    check_measurements(measurements, mics)?;
    let mut x = init.unwrap_or_else(|| {
        let mut c = [0.0; 3];
        for m in mics {
            for d in 0..3 {
                c[d] += m[d] / mics.len() as f64;
            }
        }
        c
    });

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut r = residuals(x, measurements, mics);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();

    for iter in 0..100 {
        iterations = iter + 1;
        // Jacobian of each residual wrt x.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (m, ri) in measurements.iter().zip(&r) {
            let dj = sub3(x, mics[m.mic_j]);
            let di = sub3(x, mics[m.mic_i]);
            let (nj, ni) = (norm3(dj).max(1e-12), norm3(di).max(1e-12));
            let row = [
                dj[0] / nj - di[0] / ni,
                dj[1] / nj - di[1] / ni,
                dj[2] / nj - di[2] / ni,
            ];
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let grad_norm = norm3(jtr);
        if grad_norm < 1e-9 {
            converged = true;
            break;
        }
        let mut damped = jtj;
        for (d, row) in damped.iter_mut().enumerate() {
            row[d] += lambda;
        }
        let Some(step) = solve3(damped, [-jtr[0], -jtr[1], -jtr[2]]) else {
            lambda *= 10.0;
            continue;
        };
        let candidate = [x[0] + step[0], x[1] + step[1], x[2] + step[2]];
        let r_new = residuals(candidate, measurements, mics);
        let cost_new: f64 = r_new.iter().map(|v| v * v).sum();
        if cost_new < cost {
            x = candidate;
            r = r_new;
            cost = cost_new;
            lambda = (lambda / 10.0).max(1e-12);
            if norm3(step) < 1e-10 {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
        }
    }

    Ok(LocalizationResult {
        position: x,
        residual_rms: (cost / measurements.len() as f64).sqrt(),
        iterations,
        converged,
    })
}

/// Ranked candidate delays for one microphone pair, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCandidates {
    pub mic_i: usize,
    pub mic_j: usize,
    pub delays_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub max_hypotheses: usize,
    /// Range-difference residual below which a pair counts as an
    /// inlier, metres.
    pub inlier_threshold_m: f64,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_hypotheses: 200,
            inlier_threshold_m: 2.0 * SPEED_OF_SOUND / SAMPLE_RATE as f64,
            min_inliers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub result: LocalizationResult,
    /// Index of the winning hypothesis (ties go to the lowest).
    pub hypothesis: usize,
    /// Per input pair, the candidate index used if the pair is an
    /// inlier of the final fit.
    pub inlier_candidates: Vec<Option<usize>>,
}

fn best_candidate(x: [f64; 3], pair: &PairCandidates, mics: &[[f64; 3]]) -> (usize, f64) {
    let geo =
        norm3(sub3(mics[pair.mic_j], x)) - norm3(sub3(mics[pair.mic_i], x));
    pair.delays_s
        .iter()
        .enumerate()
        .map(|(ci, d)| (ci, (geo - SPEED_OF_SOUND * d).abs()))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
}

/// RANSAC localization over per-pair candidate lists.
///
/// Each hypothesis draws four distinct pairs covering at least five
/// microphones, picks one candidate delay per drawn pair, and solves the
/// small least-squares problem. Hypotheses are scored by how many pairs
/// have *some* candidate within the inlier threshold of the hypothesis
/// position; the best (lowest index on ties) is refit on its inliers.
pub fn ransac_localize(
    pairs: &[PairCandidates],
    mics: &[[f64; 3]],
    config: &RansacConfig,
    rng: &mut impl Rng,
) -> Result<RansacResult, MultilatError> {
    for p in pairs {
        if p.delays_s.is_empty() {
            return Err(MultilatError::EmptyCandidates(p.mic_i, p.mic_j));
        }
    }
    let top1: Vec<TdoaMeasurement> = pairs
        .iter()
        .map(|p| TdoaMeasurement { mic_i: p.mic_i, mic_j: p.mic_j, delay_s: p.delays_s[0] })
        .collect();
    check_measurements(&top1, mics)?;

    let mut best: Option<(usize, usize, [f64; 3])> = None; // (inliers, hypothesis, pos)
    for hyp in 0..config.max_hypotheses {
        // Minimal subset: 4 distinct pairs spanning >= 5 microphones.
        let subset = {
            let mut tries = 0;
            loop {
                let mut idx: Vec<usize> = Vec::with_capacity(4);
                while idx.len() < 4 {
                    let i = rng.gen_range(0..pairs.len());
                    if !idx.contains(&i) {
                        idx.push(i);
                    }
                }
                let mut mics_seen = std::collections::BTreeSet::new();
                for &i in &idx {
                    mics_seen.insert(pairs[i].mic_i);
                    mics_seen.insert(pairs[i].mic_j);
                }
                if mics_seen.len() >= 5 {
                    break idx;
                }
                tries += 1;
                if tries > 64 {
                    break idx; // fall through; the solve may still work
                }
            }
        };
        let sample: Vec<TdoaMeasurement> = subset
            .iter()
            .map(|&i| {
                let p = &pairs[i];
                let c = rng.gen_range(0..p.delays_s.len());
                TdoaMeasurement { mic_i: p.mic_i, mic_j: p.mic_j, delay_s: p.delays_s[c] }
            })
            .collect();
        let Ok(fit) = solve_tdoa_ls(&sample, mics, None) else { continue };
        if !fit.position.iter().all(|v| v.is_finite()) {
            continue;
        }
        let inliers = pairs
            .iter()
            .filter(|p| best_candidate(fit.position, p, mics).1 < config.inlier_threshold_m)
            .count();
        if best.is_none_or(|(bi, _, _)| inliers > bi) {
            best = Some((inliers, hyp, fit.position));
        }
    }

    let (inlier_count, hypothesis, pos) =
        best.ok_or(MultilatError::NoConsensus { needed: config.min_inliers, best: 0 })?;
    if inlier_count < config.min_inliers {
        return Err(MultilatError::NoConsensus {
            needed: config.min_inliers,
            best: inlier_count,
        });
    }

    // Refit on the consensus set using each inlier's best candidate.
    let mut inlier_candidates = vec![None; pairs.len()];
    let mut refit_meas = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        let (ci, resid) = best_candidate(pos, p, mics);
        if resid < config.inlier_threshold_m {
            inlier_candidates[pi] = Some(ci);
            refit_meas.push(TdoaMeasurement {
                mic_i: p.mic_i,
                mic_j: p.mic_j,
                delay_s: p.delays_s[ci],
            });
        }
    }
    let result = solve_tdoa_ls(&refit_meas, mics, Some(pos))?;
    Ok(RansacResult { result, hypothesis, inlier_candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::CorrelationVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Fixture geometry checked against an external least-squares
    /// solver: six face-mounted microphones, source at (1.9, 5.3, 0.8).
    fn fixture() -> (Vec<[f64; 3]>, [f64; 3]) {
        let mics = vec![
            [3.5, 4.0, 0.05],
            [3.5, 4.0, 1.95],
            [0.05, 4.0, 1.0],
            [6.95, 4.0, 1.0],
            [3.5, 0.05, 1.0],
            [3.5, 7.95, 1.0],
        ];
        (mics, [1.9, 5.3, 0.8])
    }

    fn exact_measurements(mics: &[[f64; 3]], src: [f64; 3]) -> Vec<TdoaMeasurement> {
        let d: Vec<f64> = mics.iter().map(|m| norm3(sub3(*m, src))).collect();
        let mut out = Vec::new();
        for i in 0..mics.len() {
            for j in (i + 1)..mics.len() {
                out.push(TdoaMeasurement {
                    mic_i: i,
                    mic_j: j,
                    delay_s: (d[j] - d[i]) / SPEED_OF_SOUND,
                });
            }
        }
        out
    }

    #[test]
    fn exact_delays_recover_the_source() {
        let (mics, src) = fixture();
        let meas = exact_measurements(&mics, src);
        let fit = solve_tdoa_ls(&meas, &mics, None).unwrap();
        assert!(fit.converged);
        let err = norm3(sub3(fit.position, src));
        assert!(err < 1e-6, "position error {err}");
        assert!(fit.residual_rms < 1e-7);
    }

    #[test]
    fn four_microphones_are_not_enough() {
        let (mics, src) = fixture();
        let short: Vec<[f64; 3]> = mics[..4].to_vec();
        let meas = exact_measurements(&short, src);
        assert!(matches!(
            solve_tdoa_ls(&meas, &short, None),
            Err(MultilatError::InsufficientMeasurements(4))
        ));
    }

    #[test]
    fn out_of_range_microphone_index_is_rejected() {
        let (mics, _) = fixture();
        let meas = vec![
            TdoaMeasurement { mic_i: 0, mic_j: 9, delay_s: 0.0 },
            TdoaMeasurement { mic_i: 1, mic_j: 2, delay_s: 0.0 },
            TdoaMeasurement { mic_i: 3, mic_j: 4, delay_s: 0.0 },
            TdoaMeasurement { mic_i: 4, mic_j: 5, delay_s: 0.0 },
        ];
        assert!(matches!(
            solve_tdoa_ls(&meas, &mics, None),
            Err(MultilatError::BadMicIndex(9, 6))
        ));
    }

    #[test]
    fn translation_moves_the_solution_with_the_array() {
        let (mics, src) = fixture();
        let meas = exact_measurements(&mics, src);
        let shift = [10.0, -4.0, 2.0];
        let moved: Vec<[f64; 3]> =
            mics.iter().map(|m| [m[0] + shift[0], m[1] + shift[1], m[2] + shift[2]]).collect();
        let fit = solve_tdoa_ls(&meas, &moved, None).unwrap();
        let expected = [src[0] + shift[0], src[1] + shift[1], src[2] + shift[2]];
        assert!(norm3(sub3(fit.position, expected)) < 1e-6);
    }

    #[test]
    fn parabolic_refinement_matches_the_closed_form() {
        // Peak neighbourhood (1, 3, 2) refines to +1/6 of a sample.
        let mut values = vec![0.0; 11];
        values[6] = 1.0;
        values[7] = 3.0;
        values[8] = 2.0;
        let corr = CorrelationVector::new(values, 5);
        let peaks = extract_peaks(&corr, 2);
        assert!((peaks[0].lag - (2.0 + 1.0 / 6.0)).abs() < 1e-12);
        assert_eq!(peaks[0].value, 3.0);
    }

    #[test]
    fn peaks_come_out_strongest_first() {
        let values = vec![0.0, 1.0, 0.0, 3.0, 0.0, 2.0, 0.0, 0.5, 0.2];
        let corr = CorrelationVector::new(values, 4);
        let peaks = extract_peaks(&corr, 10);
        let vals: Vec<f64> = peaks.iter().map(|p| p.value).collect();
        assert_eq!(vals, vec![3.0, 2.0, 1.0, 0.5]);
    }

    #[test]
    fn ransac_survives_adversarial_top_candidates() {
        let (mics, src) = fixture();
        let clean = exact_measurements(&mics, src);
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        // Corrupt the top candidate of 3 of the 15 pairs; keep the true
        // delay as the second-ranked candidate.
        let mut pairs: Vec<PairCandidates> = clean
            .iter()
            .map(|m| PairCandidates {
                mic_i: m.mic_i,
                mic_j: m.mic_j,
                delays_s: vec![m.delay_s],
            })
            .collect();
        for k in [1usize, 7, 12] {
            let wrong = pairs[k].delays_s[0] + 0.004; // ~1.4 m of range error
            pairs[k].delays_s = vec![wrong, pairs[k].delays_s[0]];
        }
        let ransac = ransac_localize(&pairs, &mics, &RansacConfig::default(), &mut rng).unwrap();
        let ransac_err = norm3(sub3(ransac.result.position, src));
        assert!(ransac_err < 0.02, "ransac error {ransac_err}");

        let top1: Vec<TdoaMeasurement> = pairs
            .iter()
            .map(|p| TdoaMeasurement { mic_i: p.mic_i, mic_j: p.mic_j, delay_s: p.delays_s[0] })
            .collect();
        let plain = solve_tdoa_ls(&top1, &mics, None).unwrap();
        let plain_err = norm3(sub3(plain.position, src));
        assert!(
            plain_err > 5.0 * ransac_err.max(1e-4),
            "plain LS error {plain_err} vs ransac {ransac_err}"
        );
    }

    #[test]
    fn ransac_is_deterministic_for_a_fixed_seed() {
        let (mics, src) = fixture();
        let clean = exact_measurements(&mics, src);
        let pairs: Vec<PairCandidates> = clean
            .iter()
            .map(|m| PairCandidates {
                mic_i: m.mic_i,
                mic_j: m.mic_j,
                delays_s: vec![m.delay_s + 0.0001, m.delay_s],
            })
            .collect();
        let a = ransac_localize(
            &pairs,
            &mics,
            &RansacConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = ransac_localize(
            &pairs,
            &mics,
            &RansacConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_candidate_lists_are_rejected() {
        let (mics, _) = fixture();
        let pairs = vec![PairCandidates { mic_i: 0, mic_j: 1, delays_s: vec![] }];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            ransac_localize(&pairs, &mics, &RansacConfig::default(), &mut rng),
            Err(MultilatError::EmptyCandidates(0, 1))
        ));
    }
}
