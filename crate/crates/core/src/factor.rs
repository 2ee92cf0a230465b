//! Binary decision factors, configurations, and the logistic decision model.
//!
//! A decision model scores a configuration `f ∈ {0,1}^N` by the logit
//! `α + Σ β_j f_j + Σ_{i<j} γ_ij f_i f_j`. Interactions are stored sparsely;
//! an absent pair means a zero coefficient.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Hard cap on the number of factors; keeps `{0,1}^N` enumerable.
pub const MAX_FACTORS: usize = 20;

/// Logistic sigmoid, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub id: usize,
    pub name: String,
    /// Meaning of the value 1.
    pub positive_description: String,
    /// Meaning of the value 0.
    pub negative_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSet {
    pub scenario: String,
    pub outcome_positive: String,
    pub outcome_negative: String,
    pub factors: Vec<Factor>,
}

impl FactorSet {
    /// Builds a validated factor set; ids are assigned from list order.
    pub fn new(
        scenario: impl Into<String>,
        outcome_positive: impl Into<String>,
        outcome_negative: impl Into<String>,
        factors: Vec<(String, String, String)>,
    ) -> Result<Self> {
        let set = FactorSet {
            scenario: scenario.into(),
            outcome_positive: outcome_positive.into(),
            outcome_negative: outcome_negative.into(),
            factors: factors
                .into_iter()
                .enumerate()
                .map(|(id, (name, pos, neg))| Factor {
                    id,
                    name,
                    positive_description: pos,
                    negative_description: neg,
                })
                .collect(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.factors.len();
        if n == 0 || n > MAX_FACTORS {
            return Err(Error::Validation(format!(
                "factor count {n} outside 1..={MAX_FACTORS}"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (idx, f) in self.factors.iter().enumerate() {
            if f.id != idx {
                return Err(Error::Validation(format!(
                    "factor ids must be 0..N-1 in order; position {idx} has id {}",
                    f.id
                )));
            }
            if f.name.trim().is_empty() {
                return Err(Error::Validation(format!("factor {idx} has an empty name")));
            }
            if f.positive_description.trim().is_empty() || f.negative_description.trim().is_empty()
            {
                return Err(Error::Validation(format!(
                    "factor {} has an empty description",
                    f.name
                )));
            }
            if f.positive_description.trim() == f.negative_description.trim() {
                return Err(Error::Validation(format!(
                    "factor {} has identical polarity descriptions",
                    f.name
                )));
            }
            if !seen.insert(normalize_name(&f.name)) {
                return Err(Error::Validation(format!("duplicate factor name {}", f.name)));
            }
        }
        Ok(())
    }
}

/// Canonical form used to detect duplicate factor names.
pub fn normalize_name(name: &str) -> String {
    name.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

/// A full assignment of the N binary factors, bit `j` holding `f_j`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorConfiguration {
    bits: u32,
    n: u8,
}

impl FactorConfiguration {
    pub fn from_mask(mask: u32, n: usize) -> Result<Self> {
        if n == 0 || n > MAX_FACTORS {
            return Err(Error::Validation(format!(
                "configuration length {n} outside 1..={MAX_FACTORS}"
            )));
        }
        if mask >> n != 0 {
            return Err(Error::Validation(format!(
                "mask {mask:#x} has bits beyond length {n}"
            )));
        }
        Ok(FactorConfiguration { bits: mask, n: n as u8 })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mask = bits
            .iter()
            .enumerate()
            .fold(0u32, |m, (j, &b)| if b { m | (1 << j) } else { m });
        Self::from_mask(mask, bits.len())
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_mask(0, n)
    }

    pub fn len(&self) -> usize {
        self.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mask(&self) -> u32 {
        self.bits
    }

    pub fn get(&self, j: usize) -> bool {
        debug_assert!(j < self.len());
        self.bits >> j & 1 == 1
    }

    pub fn with(&self, j: usize, value: bool) -> Self {
        let bits = if value {
            self.bits | (1 << j)
        } else {
            self.bits & !(1 << j)
        };
        FactorConfiguration { bits, n: self.n }
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len()).map(|j| self.get(j)).collect()
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Every configuration of length `n`, in mask order.
    pub fn all(n: usize) -> Result<impl Iterator<Item = FactorConfiguration>> {
        Self::zeros(n)?;
        Ok((0..1u32 << n).map(move |mask| FactorConfiguration {
            bits: mask,
            n: n as u8,
        }))
    }
}

impl fmt::Display for FactorConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.len() {
            f.write_str(if self.get(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for FactorConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Config({self})")
    }
}

impl FromStr for FactorConfiguration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Validation(format!(
                    "configuration string contains {other:?}; expected 0/1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

impl Serialize for FactorConfiguration {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FactorConfiguration {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of unordered pairs among `n` factors.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of pair `(i, j)`, `i < j`, in lexicographic pair order.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j` in lexicographic order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Length of the augmented feature vector: intercept, mains, pairs.
pub fn feature_len(n: usize) -> usize {
    1 + n + pair_count(n)
}

/// Augmented feature vector `(1, f_1..f_N, f_i f_j for i<j)`.
pub fn expand_features(config: &FactorConfiguration, n: usize) -> Result<Vec<f64>> {
    config.check_len(n)?;
    let mut x = Vec::with_capacity(feature_len(n));
    x.push(1.0);
    x.extend((0..n).map(|j| if config.get(j) { 1.0 } else { 0.0 }));
    x.extend(pairs(n).map(|(i, j)| {
        if config.get(i) && config.get(j) {
            1.0
        } else {
            0.0
        }
    }));
    Ok(x)
}

/// Decision-model coefficients θ = (α, β, γ).
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionParams {
    pub alpha: f64,
    pub beta: Vec<f64>,
    /// Interactions keyed by `(i, j)` with `i < j`; never holds explicit zeros.
    pub gamma: BTreeMap<(usize, usize), f64>,
}

impl DecisionParams {
    pub fn zeros(n: usize) -> Self {
        DecisionParams {
            alpha: 0.0,
            beta: vec![0.0; n],
            gamma: BTreeMap::new(),
        }
    }

    pub fn new(alpha: f64, beta: Vec<f64>, gamma: BTreeMap<(usize, usize), f64>) -> Result<Self> {
        let mut p = DecisionParams { alpha, beta, gamma };
        p.gamma.retain(|_, v| *v != 0.0);
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > MAX_FACTORS {
            return Err(Error::Validation(format!(
                "parameter dimension {n} outside 1..={MAX_FACTORS}"
            )));
        }
        if !self.alpha.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("non-finite intercept or main effect".into()));
        }
        for (&(i, j), &v) in &self.gamma {
            if !(i < j && j < n) {
                return Err(Error::Validation(format!(
                    "interaction key ({i},{j}) invalid for N={n}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!("interaction ({i},{j}) is not finite")));
            }
            if v == 0.0 {
                return Err(Error::Validation(format!(
                    "interaction ({i},{j}) stored as explicit zero"
                )));
            }
        }
        Ok(())
    }

    pub fn gamma_at(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.gamma.get(&key).copied().unwrap_or(0.0)
    }

    /// Flattens to `(α, β, γ-dense)` matching [`expand_features`] order.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut v = Vec::with_capacity(feature_len(n));
        v.push(self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend(pairs(n).map(|(i, j)| self.gamma_at(i, j)));
        v
    }

    pub fn from_dense(theta: &[f64], n: usize) -> Result<Self> {
        if theta.len() != feature_len(n) {
            return Err(Error::Dimension {
                expected: feature_len(n),
                actual: theta.len(),
            });
        }
        let gamma = pairs(n)
            .zip(&theta[1 + n..])
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (k, v))
            .collect();
        DecisionParams::new(theta[0], theta[1..=n].to_vec(), gamma)
    }

    pub fn negated(&self) -> Self {
        DecisionParams {
            alpha: -self.alpha,
            beta: self.beta.iter().map(|b| -b).collect(),
            gamma: self.gamma.iter().map(|(&k, &v)| (k, -v)).collect(),
        }
    }

    /// Logit `z_θ(f)`. The summation order is fixed so that a zero
    /// coefficient contributes nothing, bit for bit.
    pub fn logit_of(&self, config: &FactorConfiguration) -> Result<f64> {
        config.check_len(self.n())?;
        Ok(self.logit_unchecked(config))
    }

    pub(crate) fn logit_unchecked(&self, config: &FactorConfiguration) -> f64 {
        let mut z = self.alpha;
        for (j, b) in self.beta.iter().enumerate() {
            if config.get(j) {
                z += b;
            }
        }
        for (&(i, j), g) in &self.gamma {
            if config.get(i) && config.get(j) {
                z += g;
            }
        }
        z
    }

    pub fn predict(&self, config: &FactorConfiguration) -> Result<f64> {
        Ok(sigmoid(self.logit_of(config)?))
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    alpha: f64,
    beta: Vec<f64>,
    /// `(i, j, value)` triplets in lexicographic order.
    gamma: Vec<(usize, usize, f64)>,
}

impl Serialize for DecisionParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            alpha: self.alpha,
            beta: self.beta.clone(),
            gamma: self.gamma.iter().map(|(&(i, j), &v)| (i, j, v)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DecisionParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ParamsRepr::deserialize(d)?;
        let mut gamma = BTreeMap::new();
        for (i, j, v) in repr.gamma {
            if gamma.insert((i, j), v).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate interaction ({i},{j})"
                )));
            }
        }
        let p = DecisionParams {
            alpha: repr.alpha,
            beta: repr.beta,
            gamma,
        };
        p.validate().map_err(serde::de::Error::custom)?;
        Ok(p)
    }
}
