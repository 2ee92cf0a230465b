#![allow(dead_code)]

use chrono::{TimeZone, Utc};
use factorlens_core::em::TrainedModel;
use factorlens_core::factor::{DecisionParams, FactorConfiguration, FactorSet};
use factorlens_core::oracle::{
    placeholder_factor_set, Clock, OracleBackend, OracleClient, SyntheticOracleSpec,
};
use factorlens_core::probing::{collect_dataset, plan_configurations, BehavioralDataset, CollectOptions};
use factorlens_core::verbal::canonical_map;

pub fn clock() -> Clock {
    Clock::Fixed(Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap())
}

pub fn synthetic(spec: SyntheticOracleSpec) -> OracleClient {
    OracleClient::from_backend(&OracleBackend::Synthetic(spec), clock()).unwrap()
}

/// Exhaustive clean probe of a ground-truth model.
pub fn probe(truth: &DecisionParams, seed: u64) -> (FactorSet, BehavioralDataset) {
    let n = truth.n();
    let fs = placeholder_factor_set(n).unwrap();
    let oracle = synthetic(SyntheticOracleSpec::new(truth.clone(), canonical_map(), seed));
    let plan = plan_configurations(n, 256, seed).unwrap();
    let opts = CollectOptions {
        clock: clock(),
        ..Default::default()
    };
    let ds = collect_dataset(&oracle, &fs, &plan, opts).unwrap();
    (fs, ds)
}

/// Root-mean-square probability error over every configuration.
pub fn rmse(model: &TrainedModel, truth: &DecisionParams) -> f64 {
    let n = truth.n();
    let mut se = 0.0;
    for c in FactorConfiguration::all(n).unwrap() {
        let d = model.predict(&c).unwrap() - truth.predict(&c).unwrap();
        se += d * d;
    }
    (se / (1u64 << n) as f64).sqrt()
}
