//! Ground-truth oracle for tests and desk experiments.
//!
//! Verbal answers come from a known decision model binned through a known
//! verbal map, with optional adjacent-category noise. Joint completions
//! couple the unobserved bits through a shared latent coin. Randomness is
//! derived from `(seed, template, prompt)`, so answers do not depend on call
//! order and concurrent use stays reproducible.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::templates::{Request, TemplateId};
use super::{BackendKind, Determination, OracleTransport};
use crate::error::{Error, Result};
use crate::factor::{pairs, DecisionParams, FactorConfiguration, FactorSet};
use crate::verbal::{VerbalLevel, VerbalMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleSpec {
    pub true_params: DecisionParams,
    pub true_map: VerbalMap,
    /// Probability of replacing a verbal answer by an adjacent level.
    pub label_noise: f64,
    /// Probability that a completion's unobserved bits all copy one shared coin.
    pub completion_correlation: f64,
    pub rng_seed: u64,
    /// Condition text to per-factor determinations; unknown conditions leave
    /// every factor undetermined.
    #[serde(default)]
    pub partitions: BTreeMap<String, Vec<Determination>>,
    /// Canned raw answers per template, consumed in order, for templates the
    /// ground-truth model cannot answer itself.
    #[serde(default)]
    pub scripted: BTreeMap<TemplateId, Vec<String>>,
}

impl SyntheticOracleSpec {
    pub fn new(true_params: DecisionParams, true_map: VerbalMap, rng_seed: u64) -> Self {
        SyntheticOracleSpec {
            true_params,
            true_map,
            label_noise: 0.0,
            completion_correlation: 0.0,
            rng_seed,
            partitions: BTreeMap::new(),
            scripted: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.true_params.validate()?;
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label noise {} outside [0,1]",
                self.label_noise
            )));
        }
        if !(0.0..=1.0).contains(&self.completion_correlation) {
            return Err(Error::Config(format!(
                "completion correlation {} outside [0,1]",
                self.completion_correlation
            )));
        }
        let n = self.true_params.n();
        for (cond, dets) in &self.partitions {
            if dets.len() != n {
                return Err(Error::Config(format!(
                    "partition for {cond:?} has {} entries, expected {n}",
                    dets.len()
                )));
            }
        }
        Ok(())
    }

    /// Noise-free verbal answer for a configuration.
    pub fn clean_level(&self, config: &FactorConfiguration) -> Result<VerbalLevel> {
        let p = self.true_params.predict(config)?;
        Ok(self.true_map.nearest_level(p))
    }
}

/// Random ground truth for desk experiments: α uniform in [-1, 1], each β_j
/// uniform in [-max_beta, max_beta], and up to `max_interactions` nonzero γ
/// on distinct random pairs with values in [-1, 1].
pub fn random_ground_truth(
    n: usize,
    max_beta: f64,
    max_interactions: usize,
    seed: u64,
) -> Result<DecisionParams> {
    if !(max_beta >= 0.0 && max_beta.is_finite()) {
        return Err(Error::Config(format!("main-effect bound {max_beta} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = rng.random_range(-1.0..=1.0);
    let beta = (0..n).map(|_| rng.random_range(-max_beta..=max_beta)).collect();
    let all: Vec<(usize, usize)> = pairs(n).collect();
    let count = rng.random_range(0..=max_interactions.min(all.len()));
    let gamma = all
        .choose_multiple(&mut rng, count)
        .map(|&k| {
            let v: f64 = rng.random_range(-1.0..=1.0);
            (k, if v == 0.0 { 0.5 } else { v })
        })
        .collect();
    DecisionParams::new(alpha, beta, gamma)
}

/// Factor set with generic names, for oracles that never read descriptions.
pub fn placeholder_factor_set(n: usize) -> Result<FactorSet> {
    FactorSet::new(
        "synthetic decision scenario",
        "yes",
        "no",
        (1..=n)
            .map(|j| {
                (
                    format!("f{j}"),
                    format!("factor {j} holds"),
                    format!("factor {j} does not hold"),
                )
            })
            .collect(),
    )
}

pub struct SyntheticTransport {
    spec: SyntheticOracleSpec,
    script_pos: Mutex<BTreeMap<TemplateId, usize>>,
}

impl SyntheticTransport {
    pub fn new(spec: SyntheticOracleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(SyntheticTransport {
            spec,
            script_pos: Mutex::new(BTreeMap::new()),
        })
    }

    fn rng_for(&self, template: TemplateId, prompt: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.spec.rng_seed.to_le_bytes());
        h.update(template.as_str().as_bytes());
        h.update([0u8]);
        h.update(prompt.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// Next canned answer for the template, if any remain. Once a script
    /// runs out the transport falls back to its native behaviour.
    fn scripted(&self, template: TemplateId) -> Option<String> {
        let answers = self.spec.scripted.get(&template)?;
        let mut pos = self.script_pos.lock().expect("script cursor poisoned");
        let i = pos.entry(template).or_insert(0);
        let out = answers.get(*i).cloned();
        *i += 1;
        out
    }

    fn check_n(&self, n: usize) -> Result<()> {
        let expected = self.spec.true_params.n();
        if n != expected {
            return Err(Error::Dimension {
                expected,
                actual: n,
            });
        }
        Ok(())
    }
}

impl OracleTransport for SyntheticTransport {
    fn kind(&self) -> BackendKind {
        BackendKind::Synthetic
    }

    fn respond(&self, request: &Request<'_>, prompt: &str, _temperature: f64) -> Result<String> {
        let template = request.template();
        if let Some(answer) = self.scripted(template) {
            return Ok(answer);
        }
        match *request {
            Request::VerbalProbability { factors, config } => {
                self.check_n(factors.len())?;
                let mut level = self.spec.clean_level(config)?;
                let mut rng = self.rng_for(template, prompt);
                if rng.random_bool(self.spec.label_noise) {
                    level = *level
                        .neighbors()
                        .choose(&mut rng)
                        .expect("every level has a neighbour");
                }
                Ok(level.label().to_string())
            }
            Request::MonteCarloSampling {
                factors, observed, ..
            } => {
                self.check_n(factors.len())?;
                let mut rng = self.rng_for(template, prompt);
                let coin = rng.random_bool(0.5);
                let coupled = rng.random_bool(self.spec.completion_correlation);
                let bits: String = observed
                    .iter()
                    .map(|o| {
                        let b = match o {
                            Some(b) => *b,
                            None if coupled => coin,
                            None => rng.random_bool(0.5),
                        };
                        if b {
                            '1'
                        } else {
                            '0'
                        }
                    })
                    .collect();
                Ok(bits)
            }
            Request::FactorDetermination {
                factors,
                factor,
                condition,
            } => {
                self.check_n(factors.len())?;
                let det = self
                    .spec
                    .partitions
                    .get(condition)
                    .map(|d| d[factor])
                    .unwrap_or(Determination::Unknown);
                Ok(det.response_text().to_string())
            }
            Request::CheckBinarySupport { .. } => Ok("PASS".into()),
            Request::CheckOverlappingFactor { .. } => Ok("DISTINCT".into()),
            Request::CheckConditionCoverage { .. } => Ok("COVERED".into()),
            Request::GenerateStatements { .. }
            | Request::ExtractFactors { .. }
            | Request::MergeFactors { .. } => Err(Error::Backend(format!(
                "synthetic oracle has no (remaining) script for {template}"
            ))),
        }
    }
}
