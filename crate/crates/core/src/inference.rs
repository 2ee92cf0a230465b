//! Online inference for a free-text condition.
//!
//! The oracle first says which factors the condition fixes. The remaining
//! factors are completed jointly by the oracle T times, and the trained model's
//! prediction is averaged over the completions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::em::TrainedModel;
use crate::error::{Error, Result};
use crate::factor::{FactorConfiguration, FactorSet};
use crate::oracle::{Determination, OracleClient, PROBE_TEMPERATURE, SAMPLING_TEMPERATURE};

pub const DEFAULT_SAMPLES: usize = 50;

/// Which factors a condition fixes, and to what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionPartition {
    pub observed: BTreeMap<usize, bool>,
    pub uncertain: BTreeSet<usize>,
    pub condition_text: String,
}

impl ConditionPartition {
    /// Every factor not in `observed` becomes uncertain.
    pub fn new(n: usize, observed: BTreeMap<usize, bool>, condition_text: impl Into<String>) -> Result<Self> {
        if let Some((&k, _)) = observed.range(n..).next() {
            return Err(Error::Validation(format!("observed factor {k} out of range for N={n}")));
        }
        let uncertain = (0..n).filter(|j| !observed.contains_key(j)).collect();
        Ok(ConditionPartition {
            observed,
            uncertain,
            condition_text: condition_text.into(),
        })
    }

    pub fn from_bits(bits: &[Option<bool>], condition_text: impl Into<String>) -> Result<Self> {
        let observed = bits
            .iter()
            .enumerate()
            .filter_map(|(j, b)| b.map(|b| (j, b)))
            .collect();
        Self::new(bits.len(), observed, condition_text)
    }

    pub fn n(&self) -> usize {
        self.observed.len() + self.uncertain.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ids: BTreeSet<usize> = self.observed.keys().copied().collect();
        if !ids.is_disjoint(&self.uncertain) {
            return Err(Error::Validation("observed and uncertain factors overlap".into()));
        }
        let all: BTreeSet<usize> = ids.union(&self.uncertain).copied().collect();
        if all != (0..n).collect() {
            return Err(Error::Validation(format!(
                "partition does not cover factors 0..{n} exactly"
            )));
        }
        Ok(())
    }

    pub fn observed_bits(&self) -> Vec<Option<bool>> {
        (0..self.n()).map(|j| self.observed.get(&j).copied()).collect()
    }

    pub fn agrees_with(&self, config: &FactorConfiguration) -> bool {
        self.observed.iter().all(|(&j, &b)| config.get(j) == b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub probability: f64,
    pub samples_used: usize,
    /// Sample standard deviation over √T; absent for a single sample.
    pub standard_error: Option<f64>,
    pub per_sample_probs: Vec<f64>,
    pub samples: Vec<FactorConfiguration>,
    pub partition: ConditionPartition,
}

/// One three-way question per factor.
pub fn determine_factors(
    oracle: &OracleClient,
    factor_set: &FactorSet,
    condition_text: &str,
) -> Result<ConditionPartition> {
    let mut observed = BTreeMap::new();
    for j in 0..factor_set.len() {
        match oracle.determine_factor(factor_set, j, condition_text)? {
            Determination::One => {
                observed.insert(j, true);
            }
            Determination::Zero => {
                observed.insert(j, false);
            }
            Determination::Unknown => {}
        }
    }
    ConditionPartition::new(factor_set.len(), observed, condition_text)
}

/// `t` joint completions of the uncertain factors.
pub fn sample_joint_completions(
    oracle: &OracleClient,
    factor_set: &FactorSet,
    partition: &ConditionPartition,
    t: usize,
    temperature: f64,
) -> Result<Vec<FactorConfiguration>> {
    if t == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    partition.validate(factor_set.len())?;
    let bits = partition.observed_bits();
    if partition.uncertain.is_empty() {
        let c = FactorConfiguration::from_bits(
            &bits.iter().map(|b| b.expect("fully observed")).collect::<Vec<_>>(),
        )?;
        return Ok(vec![c; t]);
    }
    (0..t)
        .map(|i| {
            oracle.sample_completion(factor_set, &bits, &partition.condition_text, temperature, i)
        })
        .collect()
}

/// Averages the model's prediction over completions.
pub fn marginalize(
    model: &TrainedModel,
    samples: &[FactorConfiguration],
    partition: &ConditionPartition,
) -> Result<InferenceResult> {
    if samples.is_empty() {
        return Err(Error::Validation("no samples to marginalize over".into()));
    }
    let n = model.n();
    partition.validate(n)?;
    let probs = samples
        .iter()
        .map(|c| {
            if !partition.agrees_with(c) {
                return Err(Error::Validation(format!(
                    "sample {c} contradicts an observed factor"
                )));
            }
            model.predict(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let t = probs.len();
    // summing in sorted order makes the result independent of sample order
    let mut sorted = probs.clone();
    sorted.sort_by(f64::total_cmp);
    // a degenerate sample reports its single value exactly
    let mean = if sorted[0] == sorted[t - 1] {
        sorted[0]
    } else {
        sorted.iter().sum::<f64>() / t as f64
    };
    let standard_error = (t > 1).then(|| {
        let var = sorted.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (t - 1) as f64;
        (var / t as f64).sqrt()
    });
    Ok(InferenceResult {
        probability: mean,
        samples_used: t,
        standard_error,
        per_sample_probs: probs,
        samples: samples.to_vec(),
        partition: partition.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferAblation {
    #[default]
    None,
    /// A single deterministic completion instead of Monte Carlo averaging.
    NoMc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub samples: usize,
    pub temperature: f64,
    pub ablation: InferAblation,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            samples: DEFAULT_SAMPLES,
            temperature: SAMPLING_TEMPERATURE,
            ablation: InferAblation::None,
        }
    }
}

/// Marginal probability for a known partition.
pub fn infer_partition(
    model: &TrainedModel,
    oracle: &OracleClient,
    partition: &ConditionPartition,
    opts: &InferOptions,
) -> Result<InferenceResult> {
    let (t, temperature) = match opts.ablation {
        InferAblation::None => (opts.samples, opts.temperature),
        InferAblation::NoMc => (1, PROBE_TEMPERATURE),
    };
    let samples = sample_joint_completions(oracle, &model.factor_set, partition, t, temperature)?;
    marginalize(model, &samples, partition)
}

/// Full pipeline: partition the condition, sample, and marginalize.
pub fn infer(
    model: &TrainedModel,
    oracle: &OracleClient,
    condition_text: &str,
    opts: &InferOptions,
) -> Result<InferenceResult> {
    let partition = determine_factors(oracle, &model.factor_set, condition_text)?;
    infer_partition(model, oracle, &partition, opts)
}

/// Exact average over the uncertain factors under a distribution on their
/// completions (uniform when `weights` is `None`).
pub fn exact_marginal(
    model: &TrainedModel,
    partition: &ConditionPartition,
    weights: Option<&BTreeMap<FactorConfiguration, f64>>,
) -> Result<f64> {
    partition.validate(model.n())?;
    let mut total = 0.0;
    let mut mass = 0.0;
    for c in FactorConfiguration::all(model.n())? {
        if !partition.agrees_with(&c) {
            continue;
        }
        let w = match weights {
            None => 1.0,
            Some(m) => m.get(&c).copied().unwrap_or(0.0),
        };
        if w > 0.0 {
            total += w * model.predict(&c)?;
            mass += w;
        }
    }
    if mass == 0.0 {
        return Err(Error::Validation("completion distribution has no mass".into()));
    }
    Ok(total / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{EmConfig, FitDiagnostics};
    use crate::factor::DecisionParams;
    use crate::oracle::{Clock, SyntheticOracleSpec, SyntheticTransport};
    use crate::verbal::VerbalMap;
    use chrono::DateTime;

    fn factor_set(n: usize) -> FactorSet {
        FactorSet::new(
            "s",
            "y",
            "n",
            (0..n)
                .map(|j| (format!("f{j}"), format!("on{j}"), format!("off{j}")))
                .collect(),
        )
        .unwrap()
    }

    fn model(params: DecisionParams) -> TrainedModel {
        TrainedModel {
            factor_set: factor_set(params.n()),
            params,
            map: VerbalMap::canonical(),
            em_config: EmConfig::default(),
            diagnostics: FitDiagnostics {
                q_values: vec![0.0],
                final_marginal_log_likelihood: 0.0,
                iterations: 0,
                converged: true,
                monotone_violation: None,
                design_rank: 1,
                rank_deficient: false,
            },
            dataset_hash: String::new(),
            edits: Vec::new(),
        }
    }

    fn oracle(spec: SyntheticOracleSpec) -> OracleClient {
        OracleClient::new(
            Box::new(SyntheticTransport::new(spec).unwrap()),
            Clock::Fixed(DateTime::UNIX_EPOCH),
        )
    }

    fn params3() -> DecisionParams {
        DecisionParams::new(-0.5, vec![1.0, -0.7, 1.3], [((0, 2), 0.4)].into()).unwrap()
    }

    #[test]
    fn partition_table_is_returned() {
        let mut spec = SyntheticOracleSpec::new(params3(), VerbalMap::canonical(), 1);
        spec.partitions.insert(
            "cond".into(),
            vec![Determination::One, Determination::Unknown, Determination::Zero],
        );
        spec.partitions.insert("all".into(), vec![Determination::Zero; 3]);
        let o = oracle(spec);
        let p = determine_factors(&o, &factor_set(3), "cond").unwrap();
        assert_eq!(p.observed, [(0, true), (2, false)].into());
        assert_eq!(p.uncertain, [1].into());
        assert_eq!(o.transcript_count(), 3);
        let all = determine_factors(&o, &factor_set(3), "all").unwrap();
        assert!(all.uncertain.is_empty());
    }

    #[test]
    fn determination_protocol_error_names_factor() {
        let mut spec = SyntheticOracleSpec::new(params3(), VerbalMap::canonical(), 1);
        spec.scripted.insert(
            crate::oracle::TemplateId::FactorDetermination,
            vec!["maybe".into(), "perhaps".into()],
        );
        let err = determine_factors(&oracle(spec), &factor_set(3), "c").unwrap_err();
        match err {
            Error::Protocol { template, .. } => assert!(template.contains("f0")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fully_observed_needs_no_sampling() {
        let m = model(params3());
        let o = oracle(SyntheticOracleSpec::new(params3(), VerbalMap::canonical(), 1));
        let part = ConditionPartition::from_bits(&[Some(true), Some(false), Some(true)], "c").unwrap();
        for t in [1, 10, 40] {
            let r = infer_partition(
                &m,
                &o,
                &part,
                &InferOptions {
                    samples: t,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(r.probability, m.predict(&"101".parse().unwrap()).unwrap());
            assert_eq!(r.samples_used, t);
        }
        assert_eq!(o.transcript_count(), 0);
    }

    #[test]
    fn samples_respect_observed_bits_and_coupling() {
        let mut spec = SyntheticOracleSpec::new(params3(), VerbalMap::canonical(), 4);
        spec.completion_correlation = 1.0;
        let o = oracle(spec);
        let part = ConditionPartition::from_bits(&[None, Some(true), None], "c").unwrap();
        let s = sample_joint_completions(&o, &factor_set(3), &part, 200, 1.2).unwrap();
        for c in &s {
            assert!(c.get(1));
            assert_eq!(c.get(0), c.get(2));
        }
        assert!(s.iter().any(|c| c.get(0)) && s.iter().any(|c| !c.get(0)));
    }

    #[test]
    fn marginalize_examples() {
        let m = model(params3());
        let part = ConditionPartition::from_bits(&[Some(true), None, Some(false)], "c").unwrap();
        let c0: FactorConfiguration = "100".parse().unwrap();
        let c1: FactorConfiguration = "110".parse().unwrap();
        let same = marginalize(&m, &[c0; 5], &part).unwrap();
        assert_eq!(same.probability, m.predict(&c0).unwrap());
        assert_eq!(same.standard_error, Some(0.0));

        let r = marginalize(&m, &[c0, c1, c1, c0], &part).unwrap();
        let expected = 0.5 * (m.predict(&c0).unwrap() + m.predict(&c1).unwrap());
        assert!((r.probability - expected).abs() < 1e-15);
        let rev = marginalize(&m, &[c1, c0, c0, c1], &part).unwrap();
        assert_eq!(r.probability, rev.probability);
        assert_eq!(r.standard_error, rev.standard_error);

        let one = marginalize(&m, &[c0], &part).unwrap();
        assert_eq!(one.standard_error, None);
        assert!(marginalize(&m, &[], &part).is_err());
        assert!(marginalize(&m, &["111".parse().unwrap()], &part).is_err());
    }

    #[test]
    fn infer_is_deterministic_and_no_mc_ignores_t() {
        let m = model(params3());
        let mut spec = SyntheticOracleSpec::new(params3(), VerbalMap::canonical(), 9);
        spec.partitions
            .insert("c".into(), vec![Determination::Unknown, Determination::One, Determination::Unknown]);
        let run = |opts: InferOptions| infer(&m, &oracle(spec.clone()), "c", &opts).unwrap();
        let a = run(InferOptions::default());
        assert_eq!(a, run(InferOptions::default()));
        assert_eq!(a.samples_used, 50);
        let no_mc = |t| {
            run(InferOptions {
                samples: t,
                ablation: InferAblation::NoMc,
                ..Default::default()
            })
            .probability
        };
        assert_eq!(no_mc(10), no_mc(40));
    }

    #[test]
    fn exact_marginal_matches_enumeration() {
        let m = model(params3());
        let part = ConditionPartition::from_bits(&[None, Some(false), None], "c").unwrap();
        let cs = ["000", "100", "001", "101"];
        let expected: f64 = cs
            .iter()
            .map(|c| m.predict(&c.parse().unwrap()).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((exact_marginal(&m, &part, None).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn partition_validation() {
        assert!(ConditionPartition::new(2, [(3, true)].into(), "c").is_err());
        let mut p = ConditionPartition::new(3, [(0, true)].into(), "c").unwrap();
        assert!(p.validate(3).is_ok());
        p.uncertain.insert(0);
        assert!(p.validate(3).is_err());
    }
}
