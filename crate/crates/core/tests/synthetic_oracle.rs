mod common;

use factorlens_core::factor::{logit, DecisionParams, FactorConfiguration};
use factorlens_core::inference::{sample_joint_completions, ConditionPartition};
use factorlens_core::oracle::{placeholder_factor_set, random_ground_truth, SyntheticOracleSpec};
use factorlens_core::verbal::{canonical_map, VerbalLevel};
use proptest::prelude::*;

use common::synthetic;

#[test]
fn clean_answers_hit_the_anchors() {
    let fs = placeholder_factor_set(2).unwrap();
    let zero = synthetic(SyntheticOracleSpec::new(DecisionParams::zeros(2), canonical_map(), 1));
    for c in FactorConfiguration::all(2).unwrap() {
        assert_eq!(zero.elicit_verbal(&fs, &c).unwrap(), VerbalLevel::Neutral);
    }

    let low = DecisionParams::new(logit(0.05), vec![0.0, 0.0], Default::default()).unwrap();
    let o = synthetic(SyntheticOracleSpec::new(low, canonical_map(), 1));
    let c = FactorConfiguration::zeros(2).unwrap();
    assert_eq!(o.elicit_verbal(&fs, &c).unwrap(), VerbalLevel::VeryUnlikely);
    // one transcript per call
    assert_eq!(o.transcript_count(), 1);
}

#[test]
fn clean_oracle_is_deterministic_per_configuration() {
    let truth = random_ground_truth(5, 2.0, 3, 11).unwrap();
    let fs = placeholder_factor_set(5).unwrap();
    let a = synthetic(SyntheticOracleSpec::new(truth.clone(), canonical_map(), 3));
    let b = synthetic(SyntheticOracleSpec::new(truth, canonical_map(), 99));
    for c in FactorConfiguration::all(5).unwrap() {
        let first = a.elicit_verbal(&fs, &c).unwrap();
        assert_eq!(first, a.elicit_verbal(&fs, &c).unwrap());
        assert_eq!(first, b.elicit_verbal(&fs, &c).unwrap());
    }
}

#[test]
fn random_ground_truth_respects_its_bounds() {
    for seed in 0..50 {
        let n = 4 + (seed % 3) as usize;
        let p = random_ground_truth(n, 2.0, 3, seed).unwrap();
        assert_eq!(p.n(), n);
        assert!(p.beta.iter().all(|b| b.abs() <= 2.0));
        assert!(p.gamma.len() <= 3);
        assert!(p.gamma.values().all(|g| *g != 0.0 && g.abs() <= 1.0));
        assert_eq!(p, random_ground_truth(n, 2.0, 3, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_noise_always_moves_one_step(seed in 0u64..1000, mask in 0u32..32) {
        let truth = random_ground_truth(5, 2.0, 3, seed).unwrap();
        let fs = placeholder_factor_set(5).unwrap();
        let clean = synthetic(SyntheticOracleSpec::new(truth.clone(), canonical_map(), seed));
        let mut spec = SyntheticOracleSpec::new(truth, canonical_map(), seed);
        spec.label_noise = 1.0;
        let noisy = synthetic(spec);
        let c = FactorConfiguration::from_mask(mask, 5).unwrap();
        let a = clean.elicit_verbal(&fs, &c).unwrap().ordinal() as i32;
        let b = noisy.elicit_verbal(&fs, &c).unwrap().ordinal() as i32;
        prop_assert_eq!((a - b).abs(), 1);
    }
}

const SAMPLES: usize = 5000;

/// Bits of the three uncertain factors over many completions.
fn uncertain_bits(correlation: f64, seed: u64) -> Vec<[bool; 3]> {
    let truth = random_ground_truth(4, 1.0, 1, seed).unwrap();
    let fs = placeholder_factor_set(4).unwrap();
    let mut spec = SyntheticOracleSpec::new(truth, canonical_map(), seed);
    spec.completion_correlation = correlation;
    let o = synthetic(spec);
    let part = ConditionPartition::from_bits(&[None, Some(true), None, None], "a condition").unwrap();
    let samples = sample_joint_completions(&o, &fs, &part, SAMPLES, 1.2).unwrap();
    samples
        .iter()
        .map(|c| {
            assert!(c.get(1), "observed bit altered");
            [c.get(0), c.get(2), c.get(3)]
        })
        .collect()
}

fn pearson(xs: &[bool], ys: &[bool]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().filter(|b| **b).count() as f64 / n;
    let my = ys.iter().filter(|b| **b).count() as f64 / n;
    let mut cov = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (*x as u8 as f64 - mx) * (*y as u8 as f64 - my);
    }
    cov / n / (mx * (1.0 - mx) * my * (1.0 - my)).sqrt()
}

fn column(rows: &[[bool; 3]], j: usize) -> Vec<bool> {
    rows.iter().map(|r| r[j]).collect()
}

#[test]
fn uncoupled_bits_pass_chi_square_independence() {
    let rows = uncertain_bits(0.0, 5);
    // df = 1 critical value at p = 0.01
    const CRITICAL: f64 = 6.635;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let mut table = [[0.0f64; 2]; 2];
        for r in &rows {
            table[r[a] as usize][r[b] as usize] += 1.0;
        }
        let n = SAMPLES as f64;
        let mut chi = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let row: f64 = table[i].iter().sum();
                let col = table[0][j] + table[1][j];
                let e = row * col / n;
                chi += (table[i][j] - e).powi(2) / e;
            }
        }
        assert!(chi < CRITICAL, "pair ({a},{b}) chi-square {chi}");
    }
}

#[test]
fn pairwise_correlation_matches_the_coupling() {
    for (i, rho) in [0.0, 0.25, 0.5, 0.8].into_iter().enumerate() {
        let rows = uncertain_bits(rho, 100 + i as u64);
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let r = pearson(&column(&rows, a), &column(&rows, b));
            assert!((r - rho).abs() <= 0.05, "rho {rho} pair ({a},{b}) measured {r}");
        }
    }
    for r in uncertain_bits(1.0, 7) {
        assert!(r[0] == r[1] && r[1] == r[2]);
    }
}
