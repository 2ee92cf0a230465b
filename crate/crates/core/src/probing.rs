//! Behavioural probing: which configurations to ask about, collecting the
//! verbal answers, and checking them for ordinal consistency.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{FactorConfiguration, FactorSet};
use crate::oracle::{BackendKind, Clock, OracleClient};
use crate::verbal::VerbalLevel;

pub const DEFAULT_BUDGET: usize = 256;
pub const CHECKPOINT_EVERY: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub n: usize,
    pub mode: PlanMode,
    pub budget: usize,
    pub seed: u64,
    pub configs: Vec<FactorConfiguration>,
}

/// Exhaustive when `2^n ≤ budget`, otherwise `budget` distinct configurations
/// drawn uniformly without replacement.
pub fn plan_configurations(n: usize, budget: usize, seed: u64) -> Result<ProbePlan> {
    if budget < 1 {
        return Err(Error::Config("probe budget must be at least 1".into()));
    }
    FactorConfiguration::zeros(n)?;
    let space = 1usize << n;
    let (mode, configs) = if space <= budget {
        (PlanMode::Exhaustive, FactorConfiguration::all(n)?.collect())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, space, budget);
        let configs = picks
            .into_iter()
            .map(|m| FactorConfiguration::from_mask(m as u32, n))
            .collect::<Result<Vec<_>>>()?;
        (PlanMode::Sampled, configs)
    };
    Ok(ProbePlan {
        n,
        mode,
        budget,
        seed,
        configs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub config: FactorConfiguration,
    pub level: VerbalLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: BackendKind,
    pub plan_mode: PlanMode,
    pub plan_seed: u64,
    pub budget: usize,
    pub collected_at: DateTime<Utc>,
    /// `(epsilon, seed)` when labels were corrupted after collection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_noise: Option<(f64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralDataset {
    pub factor_set: FactorSet,
    pub provenance: Provenance,
    pub observations: Vec<Observation>,
}

impl BehavioralDataset {
    pub fn n(&self) -> usize {
        self.factor_set.len()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.factor_set.validate()?;
        if self.observations.is_empty() {
            return Err(Error::Validation("dataset holds no observations".into()));
        }
        let n = self.n();
        for (k, o) in self.observations.iter().enumerate() {
            if o.config.len() != n {
                return Err(Error::Validation(format!(
                    "observation {k} has length {}, expected {n}",
                    o.config.len()
                )));
            }
        }
        Ok(())
    }

    /// Builds a dataset directly from observations (imports, tests).
    pub fn from_observations(
        factor_set: FactorSet,
        observations: Vec<Observation>,
        backend: BackendKind,
        clock: Clock,
    ) -> Result<Self> {
        let budget = observations.len();
        let ds = BehavioralDataset {
            factor_set,
            provenance: Provenance {
                backend,
                plan_mode: PlanMode::Sampled,
                plan_seed: 0,
                budget,
                collected_at: clock.now(),
                label_noise: None,
            },
            observations,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub struct CollectOptions<'a> {
    /// Concurrent oracle calls within a checkpoint window.
    pub parallelism: usize,
    /// Observations already collected by an interrupted run, in plan order.
    pub resume_from: Vec<Observation>,
    /// Receives all observations so far every [`CHECKPOINT_EVERY`] and on failure.
    pub on_checkpoint: Option<&'a (dyn Fn(&[Observation]) + Sync)>,
    pub clock: Clock,
}

impl Default for CollectOptions<'_> {
    fn default() -> Self {
        CollectOptions {
            parallelism: 1,
            resume_from: Vec::new(),
            on_checkpoint: None,
            clock: Clock::System,
        }
    }
}

/// Queries the oracle once per planned configuration, preserving plan order.
pub fn collect_dataset(
    oracle: &OracleClient,
    factor_set: &FactorSet,
    plan: &ProbePlan,
    opts: CollectOptions<'_>,
) -> Result<BehavioralDataset> {
    if plan.n != factor_set.len() {
        return Err(Error::Dimension {
            expected: factor_set.len(),
            actual: plan.n,
        });
    }
    let mut observations = opts.resume_from;
    if observations.len() > plan.configs.len()
        || observations
            .iter()
            .zip(&plan.configs)
            .any(|(o, c)| o.config != *c)
    {
        return Err(Error::Validation(
            "resume checkpoint does not match the probe plan".into(),
        ));
    }
    let workers = opts.parallelism.max(1);
    let remaining = plan.configs[observations.len()..].to_vec();
    for window in remaining.chunks(CHECKPOINT_EVERY) {
        let results = elicit_window(oracle, factor_set, window, workers);
        for (config, res) in window.iter().zip(results) {
            match res {
                Ok(level) => observations.push(Observation {
                    config: *config,
                    level,
                }),
                Err(e) => {
                    if let Some(cb) = opts.on_checkpoint {
                        cb(&observations);
                    }
                    return Err(e);
                }
            }
        }
        if let Some(cb) = opts.on_checkpoint {
            cb(&observations);
        }
    }
    let ds = BehavioralDataset {
        factor_set: factor_set.clone(),
        provenance: Provenance {
            backend: oracle.kind(),
            plan_mode: plan.mode,
            plan_seed: plan.seed,
            budget: plan.budget,
            collected_at: opts.clock.now(),
            label_noise: None,
        },
        observations,
    };
    ds.validate()?;
    Ok(ds)
}

fn elicit_window(
    oracle: &OracleClient,
    factor_set: &FactorSet,
    window: &[FactorConfiguration],
    workers: usize,
) -> Vec<Result<VerbalLevel>> {
    if workers == 1 {
        return window
            .iter()
            .map(|c| oracle.elicit_verbal(factor_set, c))
            .collect();
    }
    let mut slots: Vec<Option<Result<VerbalLevel>>> = (0..window.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    window
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, c)| (i, oracle.elicit_verbal(factor_set, c)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("probe worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

/// Factor orientation toward the positive outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

/// `a` strictly dominates `b` once each factor is oriented by its polarity.
pub fn dominates(
    a: &FactorConfiguration,
    b: &FactorConfiguration,
    polarity: &[Polarity],
) -> bool {
    let mut strict = false;
    for (j, p) in polarity.iter().enumerate() {
        let (mut x, mut y) = (a.get(j), b.get(j));
        if *p == Polarity::Negative {
            x = !x;
            y = !y;
        }
        if !x && y {
            return false;
        }
        if x && !y {
            strict = true;
        }
    }
    strict
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalAudit {
    pub comparable_pairs: usize,
    pub consistent_pairs: usize,
    /// `None` when no pair is comparable.
    pub ratio: Option<f64>,
    /// Observation index pairs `(a, b)` where `a` dominates `b` but answered lower.
    pub violations: Vec<(usize, usize)>,
}

/// Fraction of dominance-ordered observation pairs whose verbal answers
/// respect the order.
pub fn ordinal_consistency_audit(
    dataset: &BehavioralDataset,
    polarity: &[Polarity],
) -> Result<OrdinalAudit> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot audit an empty dataset".into()));
    }
    if polarity.len() != dataset.n() {
        return Err(Error::Dimension {
            expected: dataset.n(),
            actual: polarity.len(),
        });
    }
    let obs = &dataset.observations;
    let mut comparable = 0;
    let mut consistent = 0;
    let mut violations = Vec::new();
    for (a, oa) in obs.iter().enumerate() {
        for (b, ob) in obs.iter().enumerate() {
            if a != b && dominates(&oa.config, &ob.config, polarity) {
                comparable += 1;
                if oa.level >= ob.level {
                    consistent += 1;
                } else {
                    violations.push((a, b));
                }
            }
        }
    }
    Ok(OrdinalAudit {
        comparable_pairs: comparable,
        consistent_pairs: consistent,
        ratio: (comparable > 0).then(|| consistent as f64 / comparable as f64),
        violations,
    })
}

/// Distinct configurations present in a dataset.
pub fn distinct_configs(dataset: &BehavioralDataset) -> BTreeSet<FactorConfiguration> {
    dataset.observations.iter().map(|o| o.config).collect()
}
