//! The seven-level verbal probability scale and its numerical mapping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::factor::{logit, sigmoid};

pub const LEVEL_COUNT: usize = 7;

/// Minimum separation between adjacent mapped probabilities.
pub const MIN_GAP: f64 = 1e-3;

const CANONICAL: [f64; LEVEL_COUNT] = [0.05, 0.15, 0.30, 0.50, 0.70, 0.85, 0.95];
/// Clipping half-width used by [`MonotoneBounds::default`].
pub const DEFAULT_HALF_WIDTH: f64 = 0.08;
const OUTER_FLOOR: f64 = 0.01;
const OUTER_CEIL: f64 = 0.99;
const OVERLAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerbalLevel {
    VeryUnlikely,
    Unlikely,
    SomewhatUnlikely,
    Neutral,
    SomewhatLikely,
    Likely,
    VeryLikely,
}

impl VerbalLevel {
    pub const ALL: [VerbalLevel; LEVEL_COUNT] = [
        VerbalLevel::VeryUnlikely,
        VerbalLevel::Unlikely,
        VerbalLevel::SomewhatUnlikely,
        VerbalLevel::Neutral,
        VerbalLevel::SomewhatLikely,
        VerbalLevel::Likely,
        VerbalLevel::VeryLikely,
    ];

    /// 1-based position on the scale (1 = very unlikely).
    pub fn ordinal(self) -> u8 {
        self.index() as u8 + 1
    }

    /// 0-based index into a [`VerbalMap`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: u8) -> Result<Self> {
        match ordinal {
            1..=7 => Ok(Self::ALL[ordinal as usize - 1]),
            _ => Err(Error::Validation(format!("verbal ordinal {ordinal} outside 1..=7"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VerbalLevel::VeryUnlikely => "very unlikely",
            VerbalLevel::Unlikely => "unlikely",
            VerbalLevel::SomewhatUnlikely => "somewhat unlikely",
            VerbalLevel::Neutral => "neutral",
            VerbalLevel::SomewhatLikely => "somewhat likely",
            VerbalLevel::Likely => "likely",
            VerbalLevel::VeryLikely => "very likely",
        }
    }

    /// Levels one ordinal step away.
    pub fn neighbors(self) -> Vec<VerbalLevel> {
        let i = self.index();
        let mut out = Vec::with_capacity(2);
        if i > 0 {
            out.push(Self::ALL[i - 1]);
        }
        if i + 1 < LEVEL_COUNT {
            out.push(Self::ALL[i + 1]);
        }
        out
    }
}

impl fmt::Display for VerbalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for VerbalLevel {
    type Err = Error;

    /// Case-insensitive exact match after trimming; inner whitespace and
    /// `_`/`-` separators are treated alike.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s
            .trim()
            .to_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.label() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown verbal level {s:?}")))
    }
}

impl Serialize for VerbalLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for VerbalLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// `φ`: probabilities for the seven levels, strictly increasing in `(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct VerbalMap {
    values: [f64; LEVEL_COUNT],
}

impl VerbalMap {
    pub fn new(values: [f64; LEVEL_COUNT]) -> Result<Self> {
        for (m, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!(
                    "verbal map value {v} for level {} outside (0,1)",
                    m + 1
                )));
            }
        }
        for m in 1..LEVEL_COUNT {
            if values[m] <= values[m - 1] {
                return Err(Error::Validation(format!(
                    "verbal map not strictly increasing at level {}: {} <= {}",
                    m + 1,
                    values[m],
                    values[m - 1]
                )));
            }
        }
        Ok(VerbalMap { values })
    }

    /// Reference mapping used to initialise estimation.
    pub fn canonical() -> Self {
        VerbalMap { values: CANONICAL }
    }

    pub fn values(&self) -> &[f64; LEVEL_COUNT] {
        &self.values
    }

    pub fn prob(&self, level: VerbalLevel) -> f64 {
        self.values[level.index()]
    }

    pub fn logit(&self, level: VerbalLevel) -> f64 {
        logit(self.prob(level))
    }

    /// Level whose mapped probability is nearest to `p` (ties go to the lower level).
    pub fn nearest_level(&self, p: f64) -> VerbalLevel {
        let mut best = VerbalLevel::VeryUnlikely;
        let mut best_d = f64::INFINITY;
        for level in VerbalLevel::ALL {
            let d = (self.prob(level) - p).abs();
            if d < best_d {
                best = level;
                best_d = d;
            }
        }
        best
    }
}

impl<'de> Deserialize<'de> for VerbalMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = <[f64; LEVEL_COUNT]>::deserialize(d)?;
        VerbalMap::new(values).map_err(serde::de::Error::custom)
    }
}

pub fn canonical_map() -> VerbalMap {
    VerbalMap::canonical()
}

pub fn verbal_to_logit(map: &VerbalMap, level: VerbalLevel) -> f64 {
    map.logit(level)
}

/// Per-level clipping windows `[lower[m], upper[m]]` for the learned map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneBounds {
    pub lower: [f64; LEVEL_COUNT],
    pub upper: [f64; LEVEL_COUNT],
}

impl Default for MonotoneBounds {
    fn default() -> Self {
        Self::centered(DEFAULT_HALF_WIDTH)
    }
}

impl MonotoneBounds {
    /// Windows of the given half-width around the canonical values. Where
    /// neighbouring windows overlap they are cut at the midpoint, leaving
    /// `MIN_GAP` between them; the outermost edges stay inside `[0.01, 0.99]`.
    pub fn centered(half_width: f64) -> Self {
        let c = CANONICAL;
        let mut lower = [0.0; LEVEL_COUNT];
        let mut upper = [0.0; LEVEL_COUNT];
        for m in 0..LEVEL_COUNT {
            lower[m] = (c[m] - half_width).max(OUTER_FLOOR);
            upper[m] = (c[m] + half_width).min(OUTER_CEIL);
        }
        for m in 0..LEVEL_COUNT - 1 {
            if upper[m] + MIN_GAP > lower[m + 1] {
                let mid = 0.5 * (c[m] + c[m + 1]);
                upper[m] = mid - 0.5 * MIN_GAP;
                lower[m + 1] = mid + 0.5 * MIN_GAP;
            }
        }
        MonotoneBounds { lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        for m in 0..LEVEL_COUNT {
            let (lo, hi) = (self.lower[m], self.upper[m]);
            if !(lo > 0.0 && hi < 1.0 && lo < hi) {
                return Err(Error::Config(format!(
                    "bounds for level {} must satisfy 0 < lower < upper < 1, got [{lo}, {hi}]",
                    m + 1
                )));
            }
            if m + 1 < LEVEL_COUNT && hi + MIN_GAP > self.lower[m + 1] + OVERLAP_TOL {
                return Err(Error::Config(format!(
                    "bounds for levels {} and {} overlap or sit closer than {MIN_GAP}",
                    m + 1,
                    m + 2
                )));
            }
        }
        Ok(())
    }
}

/// Clips each candidate value into its window. Window separation makes the
/// result strictly increasing; in-window values are returned untouched.
pub fn enforce_monotone(candidate: [f64; LEVEL_COUNT], bounds: &MonotoneBounds) -> Result<VerbalMap> {
    bounds.validate()?;
    let mut values = candidate;
    for (m, v) in values.iter_mut().enumerate() {
        if v.is_nan() {
            return Err(Error::Validation(format!("candidate value for level {} is NaN", m + 1)));
        }
        *v = v.clamp(bounds.lower[m], bounds.upper[m]);
    }
    VerbalMap::new(values)
}

/// Convenience for round-trip checks.
pub fn logit_to_prob(z: f64) -> f64 {
    sigmoid(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_values() {
        let m = canonical_map();
        // 1-based: values[1] = very unlikely, values[4] = neutral
        assert_eq!(m.values()[0], 0.05);
        assert_eq!(m.values()[3], 0.50);
        assert_eq!(m.values(), &[0.05, 0.15, 0.30, 0.50, 0.70, 0.85, 0.95]);
        assert!(VerbalMap::new(*m.values()).is_ok());
    }

    #[test]
    fn level_labels_are_a_bijection() {
        for (i, l) in VerbalLevel::ALL.iter().enumerate() {
            assert_eq!(l.ordinal() as usize, i + 1);
            assert_eq!(VerbalLevel::from_ordinal(l.ordinal()).unwrap(), *l);
            assert_eq!(l.label().parse::<VerbalLevel>().unwrap(), *l);
        }
        assert_eq!(" Very Likely\n".parse::<VerbalLevel>().unwrap(), VerbalLevel::VeryLikely);
        assert!("probably".parse::<VerbalLevel>().is_err());
        assert!(VerbalLevel::from_ordinal(0).is_err());
        assert!(VerbalLevel::from_ordinal(8).is_err());
    }

    #[test]
    fn verbal_to_logit_examples() {
        let m = canonical_map();
        assert_eq!(verbal_to_logit(&m, VerbalLevel::Neutral), 0.0);
        let vl = verbal_to_logit(&m, VerbalLevel::VeryLikely);
        assert!((vl - (0.95f64 / 0.05).ln()).abs() < 1e-12);
        assert!((vl - 2.9444).abs() < 1e-4);
        for w in VerbalLevel::ALL.windows(2) {
            assert!(verbal_to_logit(&m, w[0]) < verbal_to_logit(&m, w[1]));
        }
    }

    #[test]
    fn default_bounds_are_valid_and_contain_canonical() {
        let b = MonotoneBounds::default();
        b.validate().unwrap();
        for (m, c) in CANONICAL.iter().enumerate() {
            assert!(b.lower[m] <= *c && *c <= b.upper[m]);
        }
        assert!((b.upper[0] - 0.0995).abs() < 1e-12);
        assert!((b.lower[1] - 0.1005).abs() < 1e-12);
        assert_eq!(b.lower[3], 0.42);
    }

    #[test]
    fn enforce_monotone_identity_on_feasible() {
        let b = MonotoneBounds::default();
        let c = *canonical_map().values();
        assert_eq!(enforce_monotone(c, &b).unwrap().values(), &c);
    }

    #[test]
    fn enforce_monotone_repairs_single_inversion() {
        let b = MonotoneBounds::default();
        let mut c = *canonical_map().values();
        c[2] = 0.55; // somewhat unlikely above neutral
        let out = enforce_monotone(c, &b).unwrap();
        assert_eq!(out.values()[2], b.upper[2]);
        assert!(out.values()[2] < out.values()[3]);
        assert_eq!(out.values()[3], 0.50);
    }

    #[test]
    fn enforce_monotone_rejects_bad_bounds() {
        let mut b = MonotoneBounds::default();
        b.upper[3] = b.lower[4] + 0.01;
        assert!(matches!(
            enforce_monotone(*canonical_map().values(), &b),
            Err(Error::Config(_))
        ));
        let mut b = MonotoneBounds::default();
        b.lower[0] = 0.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn enforce_monotone_random_candidates() {
        let b = MonotoneBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut c = [0.0; LEVEL_COUNT];
            for v in c.iter_mut() {
                *v = rng.random_range(1e-6..1.0 - 1e-6);
            }
            let out = enforce_monotone(c, &b).unwrap();
            for w in out.values().windows(2) {
                assert!(w[1] - w[0] >= MIN_GAP - 1e-12);
            }
        }
    }

    #[test]
    fn nearest_level_anchors() {
        let m = canonical_map();
        assert_eq!(m.nearest_level(0.5), VerbalLevel::Neutral);
        assert_eq!(m.nearest_level(0.05), VerbalLevel::VeryUnlikely);
        assert_eq!(m.nearest_level(0.0), VerbalLevel::VeryUnlikely);
        assert_eq!(m.nearest_level(0.999), VerbalLevel::VeryLikely);
    }

    #[test]
    fn map_rejects_invalid() {
        assert!(VerbalMap::new([0.0, 0.15, 0.30, 0.50, 0.70, 0.85, 0.95]).is_err());
        assert!(VerbalMap::new([0.05, 0.15, 0.30, 0.30, 0.70, 0.85, 0.95]).is_err());
        let json = "[0.05,0.15,0.5,0.3,0.7,0.85,0.95]";
        assert!(serde_json::from_str::<VerbalMap>(json).is_err());
    }

    proptest! {
        #[test]
        fn enforce_monotone_idempotent(c in prop::array::uniform7(0.001..0.999f64)) {
            let b = MonotoneBounds::default();
            let once = enforce_monotone(c, &b).unwrap();
            let twice = enforce_monotone(*once.values(), &b).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn enforce_monotone_keeps_in_bound_values(c in prop::array::uniform7(0.001..0.999f64)) {
            let b = MonotoneBounds::default();
            let out = enforce_monotone(c, &b).unwrap();
            for m in 0..LEVEL_COUNT {
                if b.lower[m] <= c[m] && c[m] <= b.upper[m] {
                    prop_assert_eq!(out.values()[m], c[m]);
                }
            }
        }

        #[test]
        fn logit_round_trip(c in prop::array::uniform7(0.001..0.999f64)) {
            let map = enforce_monotone(c, &MonotoneBounds::default()).unwrap();
            for level in VerbalLevel::ALL {
                let back = logit_to_prob(verbal_to_logit(&map, level));
                prop_assert!((back - map.prob(level)).abs() < 1e-12);
            }
        }
    }
}
