mod common;

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use factorlens_core::editing::{calibrate_ratio, exclude_factor, replay_edit_log, set_params, EditMeta, RatioConstraint, Weighting};
use factorlens_core::elicitation::{elicit_factor_set, ElicitationConfig, FactorSetRecord};
use factorlens_core::em::{fit, EmConfig, TrainedModel};
use factorlens_core::factor::{pairs, DecisionParams};
use factorlens_core::oracle::{random_ground_truth, SyntheticOracleSpec, TemplateId};
use factorlens_core::probing::BehavioralDataset;
use factorlens_core::store::{content_hash, Artifact, ArtifactKind, ArtifactRef, Store, TranscriptLog};
use factorlens_core::verbal::canonical_map;
use factorlens_core::Error;
use proptest::prelude::*;

use common::{probe, synthetic};

fn meta(seq: i64) -> EditMeta {
    EditMeta {
        author: format!("analyst-{seq}"),
        timestamp: Utc.timestamp_opt(1_700_000_000 + seq, 0).unwrap(),
    }
}

fn arb_params(n: usize) -> impl Strategy<Value = DecisionParams> {
    let pair_list: Vec<(usize, usize)> = pairs(n).collect();
    (
        -1e3f64..1e3,
        prop::collection::vec(-1e3f64..1e3, n),
        prop::collection::vec(prop::option::of(-50.0f64..50.0), pair_list.len()),
    )
        .prop_map(move |(a, b, g)| {
            let gamma: BTreeMap<_, _> = pair_list
                .iter()
                .zip(g)
                .filter_map(|(k, v)| v.filter(|x| *x != 0.0).map(|x| (*k, x)))
                .collect();
            DecisionParams::new(a, b, gamma).unwrap()
        })
}

fn save_load<A: Artifact + PartialEq + std::fmt::Debug>(store: &Store, a: &A) {
    let h = store.save(a, Utc.timestamp_opt(1_800_000_000, 0).unwrap()).unwrap();
    assert_eq!(h, content_hash(a).unwrap());
    let back: A = store.load(&ArtifactRef::Hash(h.clone())).unwrap();
    assert_eq!(&back, a);
    let latest: A = store.load(&ArtifactRef::Latest).unwrap();
    assert_eq!(&latest, a);
    // identical payload, later timestamp: same address
    let again = store.save(a, Utc.timestamp_opt(1_900_000_000, 0).unwrap()).unwrap();
    assert_eq!(again, h);
}

fn fitted(seed: u64) -> (BehavioralDataset, TrainedModel) {
    let truth = random_ground_truth(3, 2.0, 2, seed).unwrap();
    let (_, ds) = probe(&truth, seed);
    let cfg = EmConfig {
        max_iters: 5,
        ..EmConfig::default()
    };
    let m = fit(&ds, &cfg).unwrap();
    (ds, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_kind_round_trips(seed in 0u64..10_000, params in arb_params(3)) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let (ds, model) = fitted(seed);
        save_load(&store, &ds);

        let (edited, rec) = set_params(&model, params, &meta(0)).unwrap();
        let (edited, rec2) = exclude_factor(&edited, (seed % 3) as usize, &meta(1)).unwrap();
        save_load(&store, &edited);
        save_load(&store, &rec);
        save_load(&store, &rec2);
        let back: TrainedModel = store.load(&ArtifactRef::Latest).unwrap();
        prop_assert_eq!(replay_edit_log(&back).unwrap(), back.params.clone());

        let fs = FactorSetRecord { factor_set: ds.factor_set.clone(), statements: None, report: None };
        save_load(&store, &fs);

        let o = synthetic(SyntheticOracleSpec::new(random_ground_truth(3, 2.0, 1, seed).unwrap(), canonical_map(), seed));
        for c in ds.observations.iter().map(|o| o.config) {
            o.elicit_verbal(&ds.factor_set, &c).unwrap();
        }
        save_load(&store, &TranscriptLog { transcripts: o.transcripts() });
    }
}

#[test]
fn elicited_factor_set_round_trips() {
    let lines = |p: &str| (0..20).map(|i| format!("{}. {p} {i}", i + 1)).collect::<Vec<_>>().join("\n");
    let mut spec = SyntheticOracleSpec::new(DecisionParams::zeros(2), canonical_map(), 0);
    spec.scripted = [
        (TemplateId::GenerateStatements, vec![lines("for"), lines("against")]),
        (
            TemplateId::ExtractFactors,
            vec!["income | stable income | unstable income\ndebt | low debt | high debt".into()],
        ),
    ]
    .into();
    let o = synthetic(spec);
    let rec = elicit_factor_set(&o, "loan", "approve", "deny", &[], &ElicitationConfig::default()).unwrap();
    assert!(rec.report.as_ref().unwrap().converged);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    save_load(&store, &rec);
}

#[test]
fn ratio_edit_log_replays_bit_exactly_after_reload() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let truth = random_ground_truth(4, 2.0, 3, 21).unwrap();
    let (_, ds) = probe(&truth, 21);
    let m = fit(&ds, &EmConfig::default()).unwrap();
    let ames = factorlens_core::editing::ame_report(&m.params, &Weighting::Uniform).unwrap().values;
    let anchor = (0..4).max_by(|a, b| ames[*a].abs().total_cmp(&ames[*b].abs())).unwrap();
    let target = (anchor + 1) % 4;
    let c = RatioConstraint { anchor, target, rho: 2.0 };
    let (m, _) = calibrate_ratio(&m, c, &Weighting::Uniform, &meta(0)).unwrap();
    store.save(&m, Utc.timestamp_opt(0, 0).unwrap()).unwrap();
    let back: TrainedModel = store.load(&ArtifactRef::Latest).unwrap();
    assert_eq!(replay_edit_log(&back).unwrap(), back.params);
}

#[test]
fn non_monotone_map_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let (_, model) = fitted(3);
    let h = store.save(&model, Utc.timestamp_opt(0, 0).unwrap()).unwrap();
    let path = store.path_of(ArtifactKind::Model, &h);
    let mut env: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let map = env["payload"]["map"].as_array_mut().unwrap();
    map.swap(2, 3);
    std::fs::write(&path, serde_json::to_string(&env).unwrap()).unwrap();
    match store.load::<TrainedModel>(&ArtifactRef::Hash(h)) {
        Err(Error::Validation(msg)) => assert!(msg.contains("payload rejected") || msg.contains("increasing"), "{msg}"),
        other => panic!("expected invariant rejection, got {other:?}"),
    }
}
