//! Masking patterns: which audio frames and which coordinates the model
//! may look at for a given scene.

use super::ModelError;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Evaluation protocols.
///
/// `OneA`/`OneB` use only microphones with known coordinates (the scene
/// is restricted to those first); `TwoA`/`TwoB` feed audio from every
/// microphone but reveal only the first `known` coordinates. The `B`
/// variants additionally reveal the source audio frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setup {
    OneA,
    OneB,
    TwoA,
    TwoB,
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Setup::OneA => "1a",
            Setup::OneB => "1b",
            Setup::TwoA => "2a",
            Setup::TwoB => "2b",
        };
        f.write_str(s)
    }
}

impl FromStr for Setup {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1a" => Ok(Setup::OneA),
            "1b" => Ok(Setup::OneB),
            "2a" => Ok(Setup::TwoA),
            "2b" => Ok(Setup::TwoB),
            _ => Err(ModelError::InvalidMask("unknown setup tag")),
        }
    }
}

/// How training masks are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Everything visible except the source entries.
    Fixed,
    /// Random subsets with the source audio revealed half the time.
    Random,
}

impl FromStr for MaskMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(MaskMode::Fixed),
            "random" => Ok(MaskMode::Random),
            _ => Err(ModelError::InvalidMask("unknown mask mode")),
        }
    }
}

/// The visible half of a scene with `M` microphones.
///
/// Entity 0 is the sound source, entities `1..=M` are microphones. An
/// index in `audio` means that entity's frame is an input; an index in
/// `coords` means its position is an input. The source position is
/// never an input, every microphone keeps at least one modality, and at
/// least 5 microphones keep both (the minimum for an unambiguous
/// localization geometry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    /// Entities whose audio frame is visible; may include the source 0.
    pub audio: BTreeSet<usize>,
    /// Microphones whose coordinates are visible; never contains 0.
    pub coords: BTreeSet<usize>,
    /// The evaluation protocol this mask realizes, if any.
    pub setup: Option<Setup>,
}

impl MaskSpec {
    /// Everything visible except the source audio and position.
    pub fn full(m: usize) -> MaskSpec {
        MaskSpec {
            audio: (1..=m).collect(),
            coords: (1..=m).collect(),
            setup: Some(Setup::OneA),
        }
    }

    /// The mask realizing `setup` on a scene with `total` microphones of
    /// which the first `known` have revealed coordinates. The `One*`
    /// setups expect the scene to be restricted to the known
    /// microphones beforehand, so they require `known == total`.
    pub fn for_setup(setup: Setup, known: usize, total: usize) -> Result<MaskSpec, ModelError> {
        if known < 5 {
            return Err(ModelError::TooFewMics(known));
        }
        if known > total || matches!(setup, Setup::OneA | Setup::OneB) && known != total {
            return Err(ModelError::BadKnownCount { known, total });
        }
        let mut audio: BTreeSet<usize> = (1..=total).collect();
        if matches!(setup, Setup::OneB | Setup::TwoB) {
            audio.insert(0);
        }
        Ok(MaskSpec { audio, coords: (1..=known).collect(), setup: Some(setup) })
    }

    /// Checks every structural invariant against a scene with `m`
    /// microphones.
    pub fn validate(&self, m: usize) -> Result<(), ModelError> {
        if self.audio.iter().any(|&i| i > m) {
            return Err(ModelError::InvalidMask("audio index out of range"));
        }
        if self.coords.iter().any(|&i| i == 0 || i > m) {
            return Err(ModelError::InvalidMask("coordinate index out of range"));
        }
        if (1..=m).any(|i| !self.audio.contains(&i) && !self.coords.contains(&i)) {
            return Err(ModelError::InvalidMask(
                "a microphone has both audio and coordinates hidden",
            ));
        }
        if self.audio.intersection(&self.coords).count() < 5 {
            return Err(ModelError::InvalidMask(
                "fewer than 5 microphones have both audio and coordinates",
            ));
        }
        Ok(())
    }

    /// Microphone indices (excluding the source) with visible audio.
    pub fn audio_mics(&self) -> Vec<usize> {
        self.audio.iter().copied().filter(|&i| i > 0).collect()
    }

    /// Number of visible audio frames, source included.
    pub fn k_audio(&self) -> usize {
        self.audio.len()
    }

    /// Number of visible coordinate triples.
    pub fn k_coords(&self) -> usize {
        self.coords.len()
    }
}

/// Draws a training mask for a scene with `m` microphones.
///
/// `Fixed` always yields [`MaskSpec::full`]. `Random` draws the visible
/// audio and coordinate counts uniformly from `[max(5, m - 3), m]`,
/// reveals the source audio with probability 1/2, and redraws until the
/// structural invariants hold.
pub fn sample_mask(m: usize, mode: MaskMode, rng: &mut impl Rng) -> Result<MaskSpec, ModelError> {
    if m < 5 {
        return Err(ModelError::TooFewMics(m));
    }
    if mode == MaskMode::Fixed {
        return Ok(MaskSpec::full(m));
    }
    let lo = 5.max(m - 3);
    let mut indices: Vec<usize> = (1..=m).collect();
    loop {
        let k_audio = rng.gen_range(lo..=m);
        let k_coords = rng.gen_range(lo..=m);
        let source_audio = rng.gen_bool(0.5);
        indices.shuffle(rng);
        let mut audio: BTreeSet<usize> = indices[..k_audio].iter().copied().collect();
        indices.shuffle(rng);
        let coords: BTreeSet<usize> = indices[..k_coords].iter().copied().collect();
        if source_audio {
            audio.insert(0);
        }
        let mask = MaskSpec { audio, coords, setup: None };
        if mask.validate(m).is_ok() {
            return Ok(mask);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_mask_reveals_everything_but_the_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = sample_mask(11, MaskMode::Fixed, &mut rng).unwrap();
        let all: BTreeSet<usize> = (1..=11).collect();
        assert_eq!(mask.audio, all);
        assert_eq!(mask.coords, all);
        assert!(!mask.audio.contains(&0));
        assert_eq!(mask.setup, Some(Setup::OneA));
        assert_eq!((mask.k_audio(), mask.k_coords()), (11, 11));
    }

    #[test]
    fn fewer_than_five_microphones_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            sample_mask(4, MaskMode::Random, &mut rng),
            Err(ModelError::TooFewMics(4))
        ));
    }

    #[test]
    fn ten_thousand_random_draws_are_valid_and_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut with_source = 0usize;
        for _ in 0..10_000 {
            let mask = sample_mask(11, MaskMode::Random, &mut rng).unwrap();
            mask.validate(11).unwrap();
            let lo = 8;
            let mics_with_audio = mask.audio_mics().len();
            assert!((lo..=11).contains(&mics_with_audio));
            assert!((lo..=11).contains(&mask.k_coords()));
            if mask.audio.contains(&0) {
                with_source += 1;
            }
        }
        let p = with_source as f64 / 10_000.0;
        assert!((p - 0.5).abs() < 0.02, "source audio frequency {p}");
    }

    #[test]
    fn setup_masks_have_the_documented_shapes() {
        let m = MaskSpec::for_setup(Setup::OneA, 7, 7).unwrap();
        assert_eq!((m.k_audio(), m.k_coords()), (7, 7));
        assert!(!m.audio.contains(&0));

        let m = MaskSpec::for_setup(Setup::OneB, 7, 7).unwrap();
        assert_eq!((m.k_audio(), m.k_coords()), (8, 7));
        assert!(m.audio.contains(&0));

        let m = MaskSpec::for_setup(Setup::TwoA, 7, 11).unwrap();
        assert_eq!((m.k_audio(), m.k_coords()), (11, 7));
        assert!(!m.audio.contains(&0));
        m.validate(11).unwrap();

        let m = MaskSpec::for_setup(Setup::TwoB, 7, 11).unwrap();
        assert_eq!((m.k_audio(), m.k_coords()), (12, 7));
        assert!(m.audio.contains(&0));
        m.validate(11).unwrap();
    }

    #[test]
    fn setup_mask_rejects_bad_counts() {
        assert!(MaskSpec::for_setup(Setup::OneA, 7, 11).is_err());
        assert!(MaskSpec::for_setup(Setup::TwoA, 4, 11).is_err());
        assert!(MaskSpec::for_setup(Setup::TwoA, 12, 11).is_err());
    }

    #[test]
    fn validate_rejects_each_broken_invariant() {
        let mut mask = MaskSpec::full(6);
        mask.coords.insert(0);
        assert!(mask.validate(6).is_err());

        let mut mask = MaskSpec::full(6);
        mask.audio.remove(&3);
        mask.coords.remove(&3);
        assert!(mask.validate(6).is_err());

        let mut mask = MaskSpec::full(6);
        mask.coords.remove(&1);
        mask.coords.remove(&2);
        assert!(mask.validate(6).is_err(), "overlap dropped below 5");

        let mut mask = MaskSpec::full(6);
        mask.audio.insert(9);
        assert!(mask.validate(6).is_err());
    }

    #[test]
    fn setup_tags_round_trip_through_strings() {
        for setup in [Setup::OneA, Setup::OneB, Setup::TwoA, Setup::TwoB] {
            assert_eq!(setup.to_string().parse::<Setup>().unwrap(), setup);
        }
        assert!("3c".parse::<Setup>().is_err());
    }

    proptest! {
        #[test]
        fn random_masks_always_satisfy_the_invariants(
            m in 5usize..16,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = sample_mask(m, MaskMode::Random, &mut rng).unwrap();
            prop_assert!(mask.validate(m).is_ok());
            prop_assert!(!mask.coords.contains(&0));
            let lo = 5.max(m - 3);
            prop_assert!(mask.audio_mics().len() >= lo);
            prop_assert!(mask.k_coords() >= lo);
        }
    }
}
